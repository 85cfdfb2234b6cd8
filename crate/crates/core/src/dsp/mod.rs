//! Protocol-agnostic preprocessing and augmentation.

pub mod augment;
pub mod baseband;
pub mod butterworth;
pub mod crop;
pub mod decimate;

use serde::{Deserialize, Serialize};

pub use augment::{channel_augment, rotate, scale, ChannelModel};
pub use baseband::{baseband, BasebandMode};
pub use butterworth::{
    design_butterworth_bandpass, design_butterworth_lowpass, filter_apply, Biquad, BiquadCascade,
};
pub use crop::{random_crop, CropScheduler};
pub use decimate::{decimate, max_decimation_factor};

use crate::error::{Error, Result};
use crate::signal::{ComplexSignal, LabeledDataset, LabeledWindow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandpassConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl Default for BandpassConfig {
    /// 25 kHz to 20 MHz, 3rd order.
    fn default() -> Self {
        Self {
            low_hz: 25e3,
            high_hz: 20e6,
            order: 3,
        }
    }
}

/// Preprocessing chain: baseband, optional band-pass, decimation. `crop_parts`
/// is carried here for the training and evaluation harness, which crops per
/// minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub baseband: BasebandMode,
    pub bandpass: Option<BandpassConfig>,
    pub decimation: usize,
    pub antialias: bool,
    pub crop_parts: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            baseband: BasebandMode::None,
            bandpass: Some(BandpassConfig::default()),
            decimation: 1,
            antialias: true,
            crop_parts: 1,
        }
    }
}

impl PreprocessConfig {
    /// No filtering, no decimation, no cropping.
    pub fn passthrough() -> Self {
        Self {
            bandpass: None,
            ..Self::default()
        }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if let Some(bp) = &self.bandpass {
            if !(bp.low_hz > 0.0 && bp.low_hz < bp.high_hz && bp.high_hz < sample_rate_hz / 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "band-pass {}..{} Hz invalid at fs {sample_rate_hz}",
                    bp.low_hz, bp.high_hz
                )));
            }
        }
        if self.decimation < 1 {
            return Err(Error::InvalidParameter("decimation must be at least 1".into()));
        }
        if self.crop_parts < 1 {
            return Err(Error::InvalidParameter("crop_parts must be at least 1".into()));
        }
        if let BasebandMode::KnownCenter { f_hz } = self.baseband {
            if f_hz.abs() >= sample_rate_hz / 2.0 {
                return Err(Error::InvalidParameter(format!(
                    "baseband shift {f_hz} outside +/- fs/2"
                )));
            }
        }
        Ok(())
    }

    /// Window length after decimation.
    pub fn output_len(&self, input_len: usize) -> usize {
        input_len / self.decimation.max(1)
    }
}

/// Built filter state for one sample rate, reused across signals.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    config: PreprocessConfig,
    bandpass: Option<BiquadCascade>,
    sample_rate_hz: f64,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig, sample_rate_hz: f64) -> Result<Self> {
        config.validate(sample_rate_hz)?;
        let bandpass = config
            .bandpass
            .map(|bp| design_butterworth_bandpass(bp.low_hz, bp.high_hz, bp.order, sample_rate_hz))
            .transpose()?;
        Ok(Self {
            config,
            bandpass,
            sample_rate_hz,
        })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.config
    }

    /// Baseband, band-pass, then decimate into `M` outputs.
    pub fn apply(&self, signal: &ComplexSignal) -> Result<Vec<ComplexSignal>> {
        if signal.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::InvalidParameter(format!(
                "preprocessor built for {} Hz, signal is {} Hz",
                self.sample_rate_hz,
                signal.sample_rate_hz()
            )));
        }
        let mut s = baseband(signal, self.config.baseband)?;
        if let Some(bp) = &self.bandpass {
            s = filter_apply(bp, &s);
        }
        decimate(&s, self.config.decimation, self.config.antialias)
    }

    /// Applies [`Preprocessor::apply`] to every window. Decimated phases become
    /// extra windows with the same label, split and source id.
    pub fn apply_dataset(&self, dataset: &LabeledDataset) -> Result<LabeledDataset> {
        let mut windows = Vec::with_capacity(dataset.windows.len() * self.config.decimation);
        for w in &dataset.windows {
            for s in self.apply(&w.signal)? {
                windows.push(LabeledWindow {
                    signal: s,
                    label: w.label,
                    split: w.split,
                });
            }
        }
        LabeledDataset::new(windows, dataset.class_names.clone())
    }
}

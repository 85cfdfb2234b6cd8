//! The single JSON document every command reads.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rfdcn_core::dsp::PreprocessConfig;
use rfdcn_core::synth::SynthConfig;
use rfdcn_nn::models::ModelSpec;
use rfdcn_nn::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Holds `raw/` (SigMF captures) and `windows/` (preprocessed store).
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Directory for history, evaluation and fingerprint reports.
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint: "model.ckpt".into(),
            report: "reports".into(),
        }
    }
}

impl Paths {
    pub fn raw_dir(&self) -> PathBuf {
        self.data_dir.join("raw")
    }

    pub fn windows_dir(&self) -> PathBuf {
        self.data_dir.join("windows")
    }

    /// Resolves relative paths against `base` (the config file's directory).
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.data_dir, &mut self.checkpoint, &mut self.report] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads and validates a config file. Relative paths inside it are taken
    /// relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.paths.rebase(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides both the dataset seed and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }

    /// Crop parts shared by training, evaluation and fingerprinting.
    pub fn crop_parts(&self) -> usize {
        self.preprocess.crop_parts
    }

    /// Window length the model sees after decimation and cropping.
    pub fn model_input_len(&self) -> usize {
        self.preprocess.output_len(self.synth.window_len) / self.crop_parts()
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate().context("synth")?;
        self.preprocess.validate(self.synth.sample_rate_hz).context("preprocess")?;
        self.model.validate().context("model")?;
        self.train.validate().context("train")?;
        if self.train.crop_parts.unwrap_or(1) != self.crop_parts() {
            bail!(
                "train.crop_parts ({:?}) disagrees with preprocess.crop_parts ({})",
                self.train.crop_parts,
                self.crop_parts()
            );
        }
        if self.model.class_count != self.synth.device_count {
            bail!(
                "model.class_count {} but synth.device_count {}",
                self.model.class_count,
                self.synth.device_count
            );
        }
        let want = self.model_input_len();
        if self.model.input_len != want {
            bail!(
                "model.input_len {} but windows of {} samples, decimation {} and crop {} give {want}",
                self.model.input_len,
                self.synth.window_len,
                self.preprocess.decimation,
                self.crop_parts()
            );
        }
        Ok(())
    }

    /// Training settings with the crop taken from the preprocessing section.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.crop_parts = (self.crop_parts() > 1).then_some(self.crop_parts());
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.synth.device_count = 4;
        c.synth.window_len = 256;
        c.model.class_count = 4;
        c.model.input_len = 256;
        c
    }

    #[test]
    fn round_trip() {
        let mut c = small();
        c.train.lr_init = 3e-3;
        c.preprocess.decimation = 2;
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_json(r#"{"train": {"lr": 0.1}}"#).unwrap_err();
        assert!(e.to_string().contains("lr"), "{e}");
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn input_len_must_match_pipeline() {
        let mut c = small();
        c.validate().unwrap();
        c.preprocess.decimation = 2;
        let e = c.validate().unwrap_err();
        assert!(format!("{e:#}").contains("input_len"), "{e:#}");
        c.model.input_len = 128;
        c.validate().unwrap();
    }

    #[test]
    fn crop_sources_must_agree() {
        let mut c = small();
        c.train.crop_parts = Some(2);
        assert!(c.validate().is_err());
        c.preprocess.crop_parts = 2;
        c.model.input_len = 128;
        c.validate().unwrap();
        assert_eq!(c.train_config().crop_parts, Some(2));
    }

    #[test]
    fn seed_override_reaches_both_sections() {
        let c = small().with_seed(42);
        assert_eq!((c.synth.seed, c.train.seed), (42, 42));
    }
}

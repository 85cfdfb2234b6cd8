//! Software transmitters with per-device hardware impairments.
//!
//! A device is a fixed [`DeviceImpairments`] vector. Each window carries
//! fresh random payload bits, so the only thing tying a window to its device
//! is the impairment chain:
//!
//! 1. IQ imbalance: `I' = I`, `Q' = g (Q cos psi + I sin psi)`
//! 2. DC offset added
//! 3. memoryless PA nonlinearity `y = x + c x |x|^2`
//! 4. carrier offset and phase noise, `exp(j (2 pi cfo k / fs + phi_k))`
//!    with `phi_k` a Gaussian random walk starting at 0
//!
//! With every impairment at zero the chain is the identity.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::augment::add_awgn;
use crate::error::{Error, Result};
use crate::signal::{stratified_split, ComplexSignal, LabeledDataset, LabeledWindow, Split};

/// PPM slot length: one bit per slot, pulse in the first or second half.
pub const PPM_SLOT_S: f64 = 2e-6;
/// Active subcarriers of the multicarrier QPSK toy.
pub const QPSK_SUBCARRIERS: usize = 16;
/// Subcarrier spacing; 16 carriers at 1.25 MHz span 20 MHz.
pub const QPSK_SPACING_HZ: f64 = 1.25e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceImpairments {
    pub iq_gain_imbalance: f64,
    pub iq_phase_imbalance: f64,
    pub dc_offset: Complex64,
    pub cfo_hz: f64,
    pub phase_noise_std: f64,
    pub pa_cubic_coeff: f64,
}

impl DeviceImpairments {
    pub fn ideal() -> Self {
        Self {
            iq_gain_imbalance: 1.0,
            iq_phase_imbalance: 0.0,
            dc_offset: Complex64::new(0.0, 0.0),
            cfo_hz: 0.0,
            phase_noise_std: 0.0,
            pa_cubic_coeff: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iq_gain_imbalance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "iq gain imbalance must be positive, got {}",
                self.iq_gain_imbalance
            )));
        }
        if !(self.phase_noise_std >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "phase noise std must be >= 0, got {}",
                self.phase_noise_std
            )));
        }
        Ok(())
    }
}

impl Default for DeviceImpairments {
    fn default() -> Self {
        Self::ideal()
    }
}

/// Standard deviations used when drawing device impairments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpairmentSpread {
    pub iq_gain: f64,
    pub iq_phase: f64,
    pub dc_offset: f64,
    pub cfo_hz: f64,
    pub phase_noise: f64,
    pub pa_cubic: f64,
}

impl ImpairmentSpread {
    pub fn zero() -> Self {
        Self {
            iq_gain: 0.0,
            iq_phase: 0.0,
            dc_offset: 0.0,
            cfo_hz: 0.0,
            phase_noise: 0.0,
            pa_cubic: 0.0,
        }
    }

    /// Spread that makes devices clearly separable at 100 MSPS.
    pub fn moderate() -> Self {
        Self {
            iq_gain: 0.05,
            iq_phase: 0.05,
            dc_offset: 0.05,
            cfo_hz: 2e3,
            phase_noise: 1e-3,
            pa_cubic: 0.03,
        }
    }

    fn values(&self) -> [f64; 6] {
        [
            self.iq_gain,
            self.iq_phase,
            self.dc_offset,
            self.cfo_hz,
            self.phase_noise,
            self.pa_cubic,
        ]
    }
}

impl Default for ImpairmentSpread {
    fn default() -> Self {
        Self::moderate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulator {
    Ppm,
    MulticarrierQpsk,
}

/// Per-window channel SNR: a fixed value or a uniform range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SnrSpec {
    Fixed(f64),
    Range { min_db: f64, max_db: f64 },
}

impl SnrSpec {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SnrSpec::Fixed(v) => v,
            SnrSpec::Range { min_db, max_db } if max_db > min_db => rng.random_range(min_db..max_db),
            SnrSpec::Range { min_db, .. } => min_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub device_count: usize,
    pub modulator: Modulator,
    pub snr_db: SnrSpec,
    pub windows_per_device: usize,
    pub window_len: usize,
    pub sample_rate_hz: f64,
    pub impairment_spread: ImpairmentSpread,
    /// Per-class (train, val, test) fractions.
    pub split: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            device_count: 10,
            modulator: Modulator::MulticarrierQpsk,
            snr_db: SnrSpec::Fixed(15.0),
            windows_per_device: 250,
            window_len: crate::signal::DEFAULT_WINDOW_LEN,
            sample_rate_hz: 100e6,
            impairment_spread: ImpairmentSpread::moderate(),
            split: (0.8, 0.0, 0.2),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.device_count < 2 {
            return Err(Error::InvalidParameter("device_count must be at least 2".into()));
        }
        if self.windows_per_device < 2 {
            return Err(Error::InvalidParameter("windows_per_device must be at least 2".into()));
        }
        if self.window_len == 0 || !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidParameter("window_len and sample rate must be positive".into()));
        }
        if self.impairment_spread.values().iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("impairment spreads must be >= 0".into()));
        }
        if let SnrSpec::Range { min_db, max_db } = self.snr_db {
            if !(min_db <= max_db) {
                return Err(Error::InvalidParameter("snr range min must not exceed max".into()));
            }
        }
        payload_capacity(self.modulator, self.window_len, self.sample_rate_hz).and_then(|c| {
            if c == 0 {
                Err(Error::InvalidParameter("window too short for one symbol".into()))
            } else {
                Ok(())
            }
        })
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.device_count).map(|d| format!("device_{d:03}")).collect()
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws `device_count` impairment vectors from `seed`.
pub fn draw_devices(config: &SynthConfig) -> Result<Vec<DeviceImpairments>> {
    let sp = &config.impairment_spread;
    if sp.values().iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter("impairment spreads must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0de1_1ce5);
    Ok((0..config.device_count)
        .map(|_| {
            let g = normal(&mut rng);
            let p = normal(&mut rng);
            let dr = normal(&mut rng);
            let di = normal(&mut rng);
            let cfo = normal(&mut rng);
            let pn = normal(&mut rng);
            let pa = normal(&mut rng);
            DeviceImpairments {
                iq_gain_imbalance: (1.0 + sp.iq_gain * g).max(1e-3),
                iq_phase_imbalance: sp.iq_phase * p,
                dc_offset: Complex64::new(sp.dc_offset * dr, sp.dc_offset * di),
                cfo_hz: sp.cfo_hz * cfo,
                phase_noise_std: sp.phase_noise * pn.abs(),
                pa_cubic_coeff: -sp.pa_cubic * pa.abs(),
            }
        })
        .collect())
}

fn ppm_slot_len(fs: f64) -> Result<usize> {
    let n = (PPM_SLOT_S * fs).round() as usize;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "sample rate {fs} too low for {PPM_SLOT_S} s PPM slots"
        )));
    }
    Ok(n)
}

fn qpsk_symbol_len(fs: f64) -> Result<usize> {
    let n = (fs / QPSK_SPACING_HZ).round() as usize;
    if n <= QPSK_SUBCARRIERS {
        return Err(Error::InvalidParameter(format!(
            "sample rate {fs} too low for {QPSK_SUBCARRIERS} subcarriers"
        )));
    }
    Ok(n)
}

/// Subcarrier bins `-8..=-1, 1..=8` (DC unused).
fn qpsk_bins() -> impl Iterator<Item = i64> {
    let half = (QPSK_SUBCARRIERS / 2) as i64;
    (-half..0).chain(1..=half)
}

/// Payload bits that fit in one window.
pub fn payload_capacity(modulator: Modulator, window_len: usize, fs: f64) -> Result<usize> {
    Ok(match modulator {
        Modulator::Ppm => window_len / ppm_slot_len(fs)?,
        Modulator::MulticarrierQpsk => (window_len / qpsk_symbol_len(fs)?) * 2 * QPSK_SUBCARRIERS,
    })
}

/// Ideal baseband waveform. Bits beyond the payload leave the rest of the
/// window silent.
pub fn modulate(bits: &[u8], modulator: Modulator, window_len: usize, fs: f64) -> Result<Vec<Complex64>> {
    let capacity = payload_capacity(modulator, window_len, fs)?;
    if bits.len() > capacity {
        return Err(Error::PayloadExceedsWindow {
            bits: bits.len(),
            capacity,
        });
    }
    let mut out = vec![Complex64::new(0.0, 0.0); window_len];
    match modulator {
        Modulator::Ppm => {
            let slot = ppm_slot_len(fs)?;
            let half = slot / 2;
            for (i, &b) in bits.iter().enumerate() {
                let start = i * slot + if b != 0 { 0 } else { half };
                let end = if b != 0 { i * slot + half } else { (i + 1) * slot };
                for s in &mut out[start..end] {
                    *s = Complex64::new(1.0, 0.0);
                }
            }
        }
        Modulator::MulticarrierQpsk => {
            let sym = qpsk_symbol_len(fs)?;
            let basis: Vec<Vec<Complex64>> = qpsk_bins()
                .map(|k| {
                    (0..sym)
                        .map(|n| Complex64::from_polar(1.0, 2.0 * PI * (k * n as i64) as f64 / sym as f64))
                        .collect()
                })
                .collect();
            let norm = 1.0 / (QPSK_SUBCARRIERS as f64).sqrt();
            let bits_per_symbol = 2 * QPSK_SUBCARRIERS;
            for (s, chunk) in bits.chunks(bits_per_symbol).enumerate() {
                let frame = &mut out[s * sym..(s + 1) * sym];
                for (c, pair) in chunk.chunks(2).enumerate() {
                    let i = if pair[0] != 0 { 1.0 } else { -1.0 };
                    let q = if pair.get(1).copied().unwrap_or(0) != 0 { 1.0 } else { -1.0 };
                    let d = Complex64::new(i, q) * FRAC_1_SQRT_2 * norm;
                    for (x, b) in frame.iter_mut().zip(&basis[c]) {
                        *x += d * b;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Applies the device impairment chain to an ideal waveform in place.
pub fn impair<R: Rng + ?Sized>(x: &mut [Complex64], device: &DeviceImpairments, fs: f64, rng: &mut R) {
    let (sin_p, cos_p) = device.iq_phase_imbalance.sin_cos();
    let g = device.iq_gain_imbalance;
    let c = device.pa_cubic_coeff;
    let w = 2.0 * PI * device.cfo_hz / fs;
    let mut phi = 0.0;
    for (k, s) in x.iter_mut().enumerate() {
        let (i, q) = (s.re, s.im);
        let mut v = Complex64::new(i, g * (q * cos_p + i * sin_p));
        v += device.dc_offset;
        v += v * v.norm_sqr() * c;
        if k > 0 && device.phase_noise_std > 0.0 {
            phi += device.phase_noise_std * normal(rng);
        }
        *s = v * Complex64::from_polar(1.0, w * k as f64 + phi);
    }
}

/// Modulates `payload_bits` and passes the waveform through `device`.
pub fn transmit<R: Rng + ?Sized>(
    payload_bits: &[u8],
    device: &DeviceImpairments,
    modulator: Modulator,
    window_len: usize,
    fs: f64,
    rng: &mut R,
) -> Result<ComplexSignal> {
    device.validate()?;
    let mut x = modulate(payload_bits, modulator, window_len, fs)?;
    impair(&mut x, device, fs, rng);
    ComplexSignal::new(x, fs)
}

fn device_seed(seed: u64, device: usize) -> u64 {
    let mut x = seed ^ (device as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^ (x >> 33)
}

/// A generated dataset plus the payload bits of every window, in window
/// order. Exposed so payload/label independence can be audited.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: LabeledDataset,
    pub devices: Vec<DeviceImpairments>,
    pub payloads: Vec<Vec<u8>>,
}

pub fn generate(config: &SynthConfig) -> Result<Generated> {
    config.validate()?;
    let devices = draw_devices(config)?;
    let capacity = payload_capacity(config.modulator, config.window_len, config.sample_rate_hz)?;

    let per_device: Vec<Result<Vec<(LabeledWindow, Vec<u8>)>>> = devices
        .par_iter()
        .enumerate()
        .map(|(d, dev)| {
            let mut rng = ChaCha8Rng::seed_from_u64(device_seed(config.seed, d));
            (0..config.windows_per_device)
                .map(|w| {
                    let bits: Vec<u8> = (0..capacity).map(|_| rng.random_range(0..2u8)).collect();
                    let tx = transmit(&bits, dev, config.modulator, config.window_len, config.sample_rate_hz, &mut rng)?;
                    let snr = config.snr_db.draw(&mut rng);
                    let rx = add_awgn(&tx, snr, &mut rng)?.with_source_id(format!("dev{d:03}-tx{w:05}"));
                    Ok((
                        LabeledWindow {
                            signal: rx,
                            label: d,
                            split: Split::Train,
                        },
                        bits,
                    ))
                })
                .collect()
        })
        .collect();

    let mut windows = Vec::new();
    let mut payloads = Vec::new();
    for dev in per_device {
        for (w, bits) in dev? {
            windows.push(w);
            payloads.push(bits);
        }
    }
    let ds = LabeledDataset::new(windows, config.class_names())?;
    let dataset = stratified_split(&ds, config.split, config.seed)?;
    Ok(Generated {
        dataset,
        devices,
        payloads,
    })
}

/// Labeled windows from `config`, split per class.
pub fn generate_dataset(config: &SynthConfig) -> Result<LabeledDataset> {
    generate(config).map(|g| g.dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{PreprocessConfig, Preprocessor};
    use rustfft::FftPlanner;

    fn small(spread: ImpairmentSpread) -> SynthConfig {
        SynthConfig {
            device_count: 3,
            windows_per_device: 6,
            window_len: 1600,
            impairment_spread: spread,
            split: (0.5, 0.0, 0.5),
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_spread_devices_identical() {
        let mut cfg = small(ImpairmentSpread::zero());
        cfg.device_count = 5;
        let d = draw_devices(&cfg).unwrap();
        assert!(d.iter().all(|x| *x == DeviceImpairments::ideal()));
    }

    #[test]
    fn device_roster_deterministic_and_distinct() {
        let cfg = small(ImpairmentSpread::moderate());
        let a = draw_devices(&cfg).unwrap();
        assert_eq!(a, draw_devices(&cfg).unwrap());
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn cfo_spread_sampling_bounds() {
        // sample std of n = 10 normals: (n-1)s^2/sigma^2 ~ chi2(9); the
        // [0.5, 1.5] sigma band holds with probability ~0.97
        let mut cfg = small(ImpairmentSpread { cfo_hz: 100.0, ..ImpairmentSpread::zero() });
        cfg.device_count = 10;
        let d = draw_devices(&cfg).unwrap();
        let mean = d.iter().map(|x| x.cfo_hz).sum::<f64>() / 10.0;
        let var = d.iter().map(|x| (x.cfo_hz - mean).powi(2)).sum::<f64>() / 9.0;
        let s = var.sqrt();
        assert!((50.0..=150.0).contains(&s), "{s}");
    }

    #[test]
    fn zero_impairments_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in [Modulator::Ppm, Modulator::MulticarrierQpsk] {
            let cap = payload_capacity(m, 6400, 100e6).unwrap();
            let bits: Vec<u8> = (0..cap).map(|_| rng.random_range(0..2)).collect();
            let ideal = modulate(&bits, m, 6400, 100e6).unwrap();
            let tx = transmit(&bits, &DeviceImpairments::ideal(), m, 6400, 100e6, &mut rng).unwrap();
            assert_eq!(tx.samples(), &ideal[..]);
        }
    }

    #[test]
    fn capacities() {
        assert_eq!(payload_capacity(Modulator::Ppm, 6400, 100e6).unwrap(), 32);
        assert_eq!(payload_capacity(Modulator::MulticarrierQpsk, 6400, 100e6).unwrap(), 80 * 32);
    }

    #[test]
    fn qpsk_unit_power() {
        let cap = payload_capacity(Modulator::MulticarrierQpsk, 6400, 100e6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bits: Vec<u8> = (0..cap).map(|_| rng.random_range(0..2)).collect();
        let x = modulate(&bits, Modulator::MulticarrierQpsk, 6400, 100e6).unwrap();
        let p = x.iter().map(|s| s.norm_sqr()).sum::<f64>() / x.len() as f64;
        assert!((p - 1.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn ppm_pulse_positions() {
        let x = modulate(&[1, 0], Modulator::Ppm, 400, 100e6).unwrap();
        assert_eq!(x[0].re, 1.0);
        assert_eq!(x[99].re, 1.0);
        assert_eq!(x[100].re, 0.0);
        assert_eq!(x[299].re, 0.0);
        assert_eq!(x[300].re, 1.0);
    }

    #[test]
    fn dc_offset_only_shifts_mean() {
        let dev = DeviceImpairments {
            dc_offset: Complex64::new(0.1, 0.0),
            ..DeviceImpairments::ideal()
        };
        let tx = transmit(&[], &dev, Modulator::Ppm, 6400, 100e6, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mean: Complex64 = tx.samples().iter().sum::<Complex64>() / 6400.0;
        assert!((mean - Complex64::new(0.1, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn cfo_moves_tone() {
        let fs = 64e3;
        let n = 6400;
        let dev = DeviceImpairments {
            cfo_hz: 1e3,
            ..DeviceImpairments::ideal()
        };
        let mut x = vec![Complex64::new(1.0, 0.0); n];
        impair(&mut x, &dev, fs, &mut ChaCha8Rng::seed_from_u64(0));
        FftPlanner::new().plan_fft_forward(n).process(&mut x);
        let peak = x.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap().0;
        let f = crate::dsp::baseband::bin_frequency(peak, n, fs);
        assert!((f - 1e3).abs() <= fs / n as f64, "{f}");
    }

    #[test]
    fn payload_too_long() {
        let bits = vec![1u8; 33];
        assert!(matches!(
            modulate(&bits, Modulator::Ppm, 6400, 100e6),
            Err(Error::PayloadExceedsWindow { bits: 33, capacity: 32 })
        ));
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let cfg = small(ImpairmentSpread::moderate());
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.windows.len(), 18);
        assert_eq!(a.dataset.split_class_counts(Split::Train), vec![3; 3]);
        a.dataset.validate().unwrap();
        assert_eq!(a.payloads.len(), 18);
    }

    #[test]
    fn generated_windows_pass_default_preprocessing() {
        let cfg = small(ImpairmentSpread::moderate());
        let ds = generate_dataset(&cfg).unwrap();
        let p = Preprocessor::new(PreprocessConfig::default(), cfg.sample_rate_hz).unwrap();
        let out = p.apply_dataset(&ds).unwrap();
        assert_eq!(out.windows.len(), ds.windows.len());
    }

    #[test]
    fn payload_bits_independent_of_label() {
        let mut cfg = small(ImpairmentSpread::moderate());
        cfg.windows_per_device = 20;
        let g = generate(&cfg).unwrap();
        let overall: f64 = g.payloads.iter().flatten().map(|&b| b as f64).sum::<f64>()
            / g.payloads.iter().map(Vec::len).sum::<usize>() as f64;
        for d in 0..cfg.device_count {
            let bits: Vec<u8> = g
                .dataset
                .windows
                .iter()
                .zip(&g.payloads)
                .filter(|(w, _)| w.label == d)
                .flat_map(|(_, p)| p.iter().copied())
                .collect();
            let n = bits.len() as f64;
            let p = bits.iter().map(|&b| b as f64).sum::<f64>() / n;
            // 4.5-sigma binomial band around the pooled frequency
            let band = 4.5 * (0.25 / n).sqrt();
            assert!((p - overall).abs() < band, "device {d}: {p} vs {overall}");
        }
    }
}

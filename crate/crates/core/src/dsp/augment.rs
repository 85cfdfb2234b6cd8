//! Rotation, scaling and flat-fading / AWGN channel augmentation.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

/// Multiplies every sample by `exp(j theta)`.
pub fn rotate(signal: &ComplexSignal, theta: f64) -> ComplexSignal {
    let r = Complex64::from_polar(1.0, theta);
    signal.map(|s| s * r)
}

/// Multiplies every sample by `a > 0`.
pub fn scale(signal: &ComplexSignal, a: f64) -> Result<ComplexSignal> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {a}")));
    }
    Ok(signal.map(|s| s * a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelModel {
    Awgn { snr_db: f64 },
    RayleighFlat,
    RicianFlat { k_factor: f64 },
}

/// Draws a standard circular complex Gaussian, `E|z|^2 = 1`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Adds circular Gaussian noise whose realized power over the window sits
/// exactly `snr_db` below the measured signal power.
pub fn add_awgn<R: Rng + ?Sized>(signal: &ComplexSignal, snr_db: f64, rng: &mut R) -> Result<ComplexSignal> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!("snr must be finite, got {snr_db}")));
    }
    let ps = signal.power();
    if ps == 0.0 {
        return Err(Error::ZeroPowerSignal);
    }
    let mut noise: Vec<Complex64> = (0..signal.len()).map(|_| complex_normal(rng)).collect();
    let pn = noise.iter().map(|n| n.norm_sqr()).sum::<f64>() / noise.len() as f64;
    let g = (ps / 10f64.powf(snr_db / 10.0) / pn).sqrt();
    for (n, s) in noise.iter_mut().zip(signal.samples()) {
        *n = s + *n * g;
    }
    signal.with_samples(noise)
}

/// Single complex gain for a flat Rician channel with K-factor `k` (LOS phase
/// zero, unit mean power). `k = 0` is Rayleigh; `k = inf` is pure LOS.
pub fn rician_gain<R: Rng + ?Sized>(k: f64, rng: &mut R) -> Result<Complex64> {
    if !(k >= 0.0) {
        return Err(Error::InvalidParameter(format!("k-factor must be >= 0, got {k}")));
    }
    if k.is_infinite() {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let los = (k / (k + 1.0)).sqrt();
    let nlos = (1.0 / (k + 1.0)).sqrt();
    Ok(los + complex_normal(rng) * nlos)
}

pub fn channel_augment<R: Rng + ?Sized>(
    signal: &ComplexSignal,
    model: &ChannelModel,
    rng: &mut R,
) -> Result<ComplexSignal> {
    match *model {
        ChannelModel::Awgn { snr_db } => add_awgn(signal, snr_db, rng),
        ChannelModel::RayleighFlat => {
            let h = rician_gain(0.0, rng)?;
            Ok(signal.map(|s| s * h))
        }
        ChannelModel::RicianFlat { k_factor } => {
            let h = rician_gain(k_factor, rng)?;
            Ok(signal.map(|s| s * h))
        }
    }
}

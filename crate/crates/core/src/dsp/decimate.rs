//! Decimation into phase-offset subsequences.

use num_complex::Complex64;

use crate::dsp::butterworth::{design_butterworth_lowpass, filter_apply};
use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

/// Order of the anti-alias low-pass applied before decimation.
pub const ANTIALIAS_ORDER: usize = 3;

/// Splits `signal` into `m` subsequences, phase `p` holding samples
/// `p, p + m, p + 2m, ...`. Each has `floor(len / m)` samples; the tail
/// remainder is dropped. With `antialias`, a 3rd-order Butterworth low-pass at
/// `fs / (2m)` runs first. Output sample rate is `fs / m`.
pub fn decimate(signal: &ComplexSignal, m: usize, antialias: bool) -> Result<Vec<ComplexSignal>> {
    if m < 1 {
        return Err(Error::InvalidParameter("decimation factor must be at least 1".into()));
    }
    if signal.len() < m {
        return Err(Error::InsufficientSamples {
            needed: m,
            available: signal.len(),
        });
    }
    if m == 1 {
        return Ok(vec![signal.clone()]);
    }
    let fs = signal.sample_rate_hz();
    let filtered;
    let source = if antialias {
        let lp = design_butterworth_lowpass(fs / (2.0 * m as f64), ANTIALIAS_ORDER, fs)?;
        filtered = filter_apply(&lp, signal);
        &filtered
    } else {
        signal
    };
    let n = signal.len() / m;
    (0..m)
        .map(|p| {
            let s: Vec<Complex64> = source.samples()[p..].iter().step_by(m).take(n).copied().collect();
            source.with_samples_and_rate(s, fs / m as f64)
        })
        .collect()
}

/// Largest integer factor keeping `fs / m >= 2 * f_max`.
pub fn max_decimation_factor(fs: f64, f_max: f64) -> Result<usize> {
    if !(fs > 0.0 && f_max > 0.0) {
        return Err(Error::InvalidParameter("rates must be positive".into()));
    }
    let m = (fs / (2.0 * f_max)).floor() as usize;
    if m < 1 {
        return Err(Error::InvalidParameter(format!(
            "sample rate {fs} is below Nyquist for {f_max} Hz content"
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(n: usize) -> ComplexSignal {
        let s = (0..n).map(|k| Complex64::new(k as f64, 0.5 * k as f64)).collect();
        ComplexSignal::new(s, 100e6).unwrap()
    }

    #[test]
    fn factor_two_of_eight() {
        let out = decimate(&ramp(8), 2, false).unwrap();
        let re: Vec<Vec<f64>> = out.iter().map(|s| s.samples().iter().map(|c| c.re).collect()).collect();
        assert_eq!(re, vec![vec![0.0, 2.0, 4.0, 6.0], vec![1.0, 3.0, 5.0, 7.0]]);
        assert_eq!(out[0].sample_rate_hz(), 50e6);
    }

    #[test]
    fn factor_one_identity() {
        let r = ramp(9);
        assert_eq!(decimate(&r, 1, true).unwrap(), vec![r]);
    }

    #[test]
    fn nyquist_bound_for_20mhz_at_100msps() {
        assert_eq!(max_decimation_factor(100e6, 20e6).unwrap(), 2);
    }

    #[test]
    fn errors() {
        assert!(decimate(&ramp(8), 0, false).is_err());
        assert!(decimate(&ramp(3), 4, false).is_err());
    }

    #[test]
    fn antialias_attenuates_out_of_band_tone() {
        let fs = 100e6;
        let tone: Vec<Complex64> = (0..4096)
            .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * 40e6 * k as f64 / fs))
            .collect();
        let out = decimate(&ComplexSignal::new(tone, fs).unwrap(), 2, true).unwrap();
        let tail = &out[0].samples()[1000..];
        let p = tail.iter().map(|s| s.norm_sqr()).sum::<f64>() / tail.len() as f64;
        assert!(p < 0.05, "residual power {p}");
    }

    proptest! {
        #[test]
        fn interleave_reconstructs_prefix(len in 1usize..200, m in 1usize..8) {
            prop_assume!(len >= m);
            let r = ramp(len);
            let out = decimate(&r, m, false).unwrap();
            let n = len / m;
            let mut rebuilt = Vec::new();
            for i in 0..n {
                for p in &out {
                    rebuilt.push(p.samples()[i]);
                }
            }
            prop_assert_eq!(&rebuilt[..], &r.samples()[..n * m]);
        }
    }
}

//! Frequency shifting to 0 Hz.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

/// Segment length of the Welch estimate used by [`BasebandMode::EstimatePsdPeak`].
pub const WELCH_BINS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasebandMode {
    #[default]
    None,
    KnownCenter {
        f_hz: f64,
    },
    EstimatePsdPeak,
}

/// Multiplies sample k by `exp(-j 2 pi f k / fs)`.
pub fn shift_frequency(signal: &ComplexSignal, f_hz: f64) -> ComplexSignal {
    if f_hz == 0.0 {
        return signal.clone();
    }
    let step = -2.0 * PI * f_hz / signal.sample_rate_hz();
    let mut k = 0usize;
    let mut out = signal.map(|s| {
        let r = s * Complex64::from_polar(1.0, step * k as f64);
        k += 1;
        r
    });
    out.center_freq_hz = signal.center_freq_hz.map(|c| c + f_hz);
    out
}

/// Welch-averaged power spectrum: Hann-windowed segments of `nfft` samples
/// with 50% overlap. Bin k corresponds to `k * fs / nfft` (wrapped to the
/// negative half above `nfft / 2`). Signals shorter than `nfft` use a single
/// segment of their full length.
pub fn welch_psd(samples: &[Complex64], nfft: usize) -> Vec<f64> {
    let nfft = nfft.min(samples.len()).max(1);
    let hop = (nfft / 2).max(1);
    let window: Vec<f64> = (0..nfft)
        .map(|n| {
            if nfft == 1 {
                1.0
            } else {
                0.5 - 0.5 * (2.0 * PI * n as f64 / (nfft - 1) as f64).cos()
            }
        })
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let mut psd = vec![0.0; nfft];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut segments = 0usize;
    let mut start = 0;
    while start + nfft <= samples.len() {
        for (b, (x, w)) in buf.iter_mut().zip(samples[start..].iter().zip(&window)) {
            *b = x * w;
        }
        fft.process(&mut buf);
        for (p, b) in psd.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    for p in &mut psd {
        *p /= segments as f64;
    }
    psd
}

/// Frequency in Hz of FFT bin `k` of an `n`-point transform.
pub fn bin_frequency(k: usize, n: usize, fs: f64) -> f64 {
    let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
    k * fs / n as f64
}

/// Frequency of the strongest Welch bin.
pub fn estimate_peak_frequency(signal: &ComplexSignal) -> Result<f64> {
    if signal.samples().iter().all(|s| s.norm_sqr() == 0.0) {
        return Err(Error::NoSpectralPeak);
    }
    let psd = welch_psd(signal.samples(), WELCH_BINS);
    let (k, _) = psd
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best });
    Ok(bin_frequency(k, psd.len(), signal.sample_rate_hz()))
}

pub fn baseband(signal: &ComplexSignal, mode: BasebandMode) -> Result<ComplexSignal> {
    match mode {
        BasebandMode::None => Ok(signal.clone()),
        BasebandMode::KnownCenter { f_hz } => {
            if f_hz.abs() >= signal.sample_rate_hz() / 2.0 {
                return Err(Error::InvalidParameter(format!(
                    "shift {f_hz} Hz outside +/- fs/2"
                )));
            }
            Ok(shift_frequency(signal, f_hz))
        }
        BasebandMode::EstimatePsdPeak => {
            let f = estimate_peak_frequency(signal)?;
            Ok(shift_frequency(signal, f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tone(f: f64, fs: f64, n: usize) -> ComplexSignal {
        let s = (0..n)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * f * k as f64 / fs))
            .collect();
        ComplexSignal::new(s, fs).unwrap()
    }

    #[test]
    fn known_center_moves_tone_to_dc() {
        let out = baseband(&tone(10e6, 100e6, 6400), BasebandMode::KnownCenter { f_hz: 10e6 }).unwrap();
        // phase-slope oracle: residual frequency from the mean phase increment
        let s = out.samples();
        let incr: Complex64 = s.windows(2).map(|w| w[1] * w[0].conj()).sum();
        let residual = incr.arg() / (2.0 * PI) * 100e6;
        assert!(residual.abs() < 1.0, "residual {residual} Hz");
        let psd = welch_psd(s, 1024);
        let peak = psd.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, 0);
    }

    #[test]
    fn zero_shift_is_identity() {
        let t = tone(1e6, 100e6, 64);
        assert_eq!(baseband(&t, BasebandMode::KnownCenter { f_hz: 0.0 }).unwrap(), t);
    }

    #[test]
    fn shift_inverse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let s: Vec<Complex64> = (0..6400)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let x = ComplexSignal::new(s, 100e6).unwrap();
        let back = shift_frequency(&shift_frequency(&x, 12.345e6), -12.345e6);
        for (a, b) in x.samples().iter().zip(back.samples()) {
            assert!((a.re - b.re).abs() < 1e-9 && (a.im - b.im).abs() < 1e-9);
        }
    }

    #[test]
    fn psd_peak_estimation() {
        // 7 MHz tone lands in bin round(7e6 / (100e6 / 1024)) = 72
        let out = baseband(&tone(7e6, 100e6, 6400), BasebandMode::EstimatePsdPeak).unwrap();
        let f = estimate_peak_frequency(&tone(7e6, 100e6, 6400)).unwrap();
        assert!((f - 72.0 * 100e6 / 1024.0).abs() < 1e-6);
        let f2 = estimate_peak_frequency(&out).unwrap();
        assert_eq!(f2, 0.0);
        let neg = estimate_peak_frequency(&tone(-7e6, 100e6, 6400)).unwrap();
        assert!((neg + 72.0 * 100e6 / 1024.0).abs() < 1e-6);
    }

    #[test]
    fn zero_signal_has_no_peak() {
        let z = ComplexSignal::new(vec![Complex64::new(0.0, 0.0); 2048], 1e6).unwrap();
        assert!(matches!(
            baseband(&z, BasebandMode::EstimatePsdPeak),
            Err(Error::NoSpectralPeak)
        ));
    }

    #[test]
    fn known_center_out_of_range() {
        assert!(baseband(&tone(0.0, 100.0, 8), BasebandMode::KnownCenter { f_hz: 60.0 }).is_err());
    }
}

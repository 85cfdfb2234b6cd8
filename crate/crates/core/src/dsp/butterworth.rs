//! Butterworth filters realized as cascaded second-order sections.
//!
//! Analog prototype poles sit at `exp(j*pi*(2k + n + 1) / (2n))`. Band edges
//! are pre-warped with `tan(pi * f / fs)` and mapped to the z-plane with the
//! bilinear transform `z = (1 + s) / (1 - s)`, so the -3.01 dB points land
//! exactly on the requested cutoffs.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

/// One second-order section, `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Section with the given zeros/poles (conjugate pairs or real pairs) and
    /// numerator gain `k`.
    fn from_roots(zeros: [Complex64; 2], poles: [Complex64; 2], k: f64) -> Self {
        let (b1, b2) = (-(zeros[0] + zeros[1]).re, (zeros[0] * zeros[1]).re);
        let (a1, a2) = (-(poles[0] + poles[1]).re, (poles[0] * poles[1]).re);
        Self {
            b0: k,
            b1: k * b1,
            b2: k * b2,
            a1,
            a2,
        }
    }

    fn first_order(zero: f64, pole: f64, k: f64) -> Self {
        Self {
            b0: k,
            b1: -k * zero,
            b2: 0.0,
            a1: -pole,
            a2: 0.0,
        }
    }

    /// Response at normalized angular frequency `w` (radians per sample).
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b0 + z1 * self.b1 + z2 * self.b2) / (1.0 + z1 * self.a1 + z2 * self.a2)
    }

    /// Pole magnitudes of `z^2 + a1 z + a2`.
    fn pole_radius(&self) -> f64 {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let p1 = (-self.a1 + disc) / 2.0;
        let p2 = (-self.a1 - disc) / 2.0;
        p1.norm().max(p2.norm())
    }
}

/// Transposed direct-form II delay registers for one section.
#[derive(Debug, Clone, Copy, Default)]
struct SectionState {
    s1: Complex64,
    s2: Complex64,
}

impl SectionState {
    #[inline]
    fn step(&mut self, q: &Biquad, x: Complex64) -> Complex64 {
        let y = x * q.b0 + self.s1;
        self.s1 = x * q.b1 - y * q.a1 + self.s2;
        self.s2 = x * q.b2 - y * q.a2;
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    sections: Vec<Biquad>,
}

impl BiquadCascade {
    /// Builds a cascade, rejecting any section with a pole on or outside the
    /// unit circle.
    pub fn new(sections: Vec<Biquad>) -> Result<Self> {
        for (i, s) in sections.iter().enumerate() {
            let r = s.pole_radius();
            if !(r < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "section {i} is unstable (pole radius {r})"
                )));
            }
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let w = 2.0 * PI * f_hz / fs;
        self.sections
            .iter()
            .map(|s| s.response(w))
            .fold(Complex64::new(1.0, 0.0), |a, b| a * b)
    }

    pub fn magnitude_db(&self, f_hz: f64, fs: f64) -> f64 {
        20.0 * self.response(f_hz, fs).norm().log10()
    }

    /// Causal forward filtering of a sample buffer from a zero state. Real
    /// coefficients act on I and Q independently.
    pub fn process(&self, input: &[Complex64]) -> Vec<Complex64> {
        let mut out = input.to_vec();
        for q in &self.sections {
            let mut st = SectionState::default();
            for x in out.iter_mut() {
                *x = st.step(q, *x);
            }
        }
        out
    }
}

/// Filters a signal; state is reset for every call and the length is kept.
pub fn filter_apply(filter: &BiquadCascade, signal: &ComplexSignal) -> ComplexSignal {
    signal
        .with_samples(filter.process(signal.samples()))
        .expect("filtering keeps the sample count")
}

fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn bilinear(s: Complex64) -> Complex64 {
    (1.0 + s) / (1.0 - s)
}

fn check_order(order: usize) -> Result<()> {
    if !(1..=16).contains(&order) {
        return Err(Error::InvalidParameter(format!(
            "filter order must be in 1..=16, got {order}"
        )));
    }
    Ok(())
}

/// Band-pass Butterworth of the given prototype order (`order` sections,
/// digital order `2 * order`), unit gain at the geometric band centre.
pub fn design_butterworth_bandpass(
    low_hz: f64,
    high_hz: f64,
    order: usize,
    fs: f64,
) -> Result<BiquadCascade> {
    check_order(order)?;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "band-pass cutoffs must satisfy 0 < low < high < fs/2, got {low_hz}, {high_hz} at fs {fs}"
        )));
    }
    let wl = (PI * low_hz / fs).tan();
    let wh = (PI * high_hz / fs).tan();
    let w0sq = wl * wh;
    let bw = wh - wl;

    let zeros = [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)];
    let mut sections = Vec::with_capacity(order);
    for p in prototype_poles(order) {
        if p.im < -1e-12 {
            continue; // handled with its conjugate
        }
        // s^2 - p*bw*s + w0^2 = 0
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0sq).sqrt();
        let s1 = (pb + disc) / 2.0;
        let s2 = (pb - disc) / 2.0;
        if p.im.abs() <= 1e-12 {
            sections.push(Biquad::from_roots(zeros, [bilinear(s1), bilinear(s2)], 1.0));
        } else {
            for s in [s1, s2] {
                let z = bilinear(s);
                sections.push(Biquad::from_roots(zeros, [z, z.conj()], 1.0));
            }
        }
    }

    // unit gain at the centre frequency, spread evenly over the sections
    let wc = 2.0 * w0sq.sqrt().atan();
    for s in &mut sections {
        let g = 1.0 / s.response(wc).norm();
        s.b0 *= g;
        s.b1 *= g;
        s.b2 *= g;
    }
    BiquadCascade::new(sections)
}

/// Low-pass Butterworth with unit DC gain.
pub fn design_butterworth_lowpass(cutoff_hz: f64, order: usize, fs: f64) -> Result<BiquadCascade> {
    check_order(order)?;
    if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "low-pass cutoff must satisfy 0 < fc < fs/2, got {cutoff_hz} at fs {fs}"
        )));
    }
    let wc = (PI * cutoff_hz / fs).tan();
    let mut sections = Vec::new();
    for p in prototype_poles(order) {
        if p.im < -1e-12 {
            continue;
        }
        let z = bilinear(p * wc);
        if p.im.abs() <= 1e-12 {
            sections.push(Biquad::first_order(-1.0, z.re, 1.0));
        } else {
            let m1 = Complex64::new(-1.0, 0.0);
            sections.push(Biquad::from_roots([m1, m1], [z, z.conj()], 1.0));
        }
    }
    for s in &mut sections {
        let g = 1.0 / s.response(0.0).norm();
        s.b0 *= g;
        s.b1 *= g;
        s.b2 *= g;
    }
    BiquadCascade::new(sections)
}

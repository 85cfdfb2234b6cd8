//! Weight initialization.
//!
//! Complex weights use a Rayleigh magnitude and a uniform phase. For a
//! Rayleigh(σ) magnitude, `Var(W) = E|W|² = 2σ²`; σ is chosen so that
//! `Var(W)` meets the Glorot (`2 / (fan_in + fan_out)`) or He
//! (`2 / fan_in`) target.

use std::f64::consts::PI;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitCriterion {
    #[default]
    Glorot,
    He,
}

pub fn rayleigh_sigma(fan_in: usize, fan_out: usize, criterion: InitCriterion) -> f64 {
    match criterion {
        InitCriterion::Glorot => 1.0 / ((fan_in + fan_out) as f64).sqrt(),
        InitCriterion::He => 1.0 / (fan_in as f64).sqrt(),
    }
}

/// Draws `(real, imag)` planes of the given shape.
pub fn complex_init<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    criterion: InitCriterion,
    rng: &mut R,
) -> (ArrayD<T>, ArrayD<T>) {
    let sigma = rayleigh_sigma(fan_in.max(1), fan_out.max(1), criterion);
    let n: usize = shape.iter().product();
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for _ in 0..n {
        // inverse CDF of Rayleigh; 1 - u keeps the log argument in (0, 1]
        let u: f64 = rng.random();
        let mag = sigma * (-2.0 * (1.0 - u).ln()).sqrt();
        let phase = rng.random_range(-PI..PI);
        re.push(T::of(mag * phase.cos()));
        im.push(T::of(mag * phase.sin()));
    }
    (
        ArrayD::from_shape_vec(IxDyn(shape), re).expect("init shape"),
        ArrayD::from_shape_vec(IxDyn(shape), im).expect("init shape"),
    )
}

/// Uniform on `[-bound, bound]`.
pub fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> ArrayD<T> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        if bound > 0.0 {
            T::of(rng.random_range(-bound..bound))
        } else {
            T::zero()
        }
    })
}

/// He-uniform for layers followed by ReLU.
pub fn he_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<T> {
    uniform(shape, (6.0 / fan_in.max(1) as f64).sqrt(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_sigma_for_fifty_fans() {
        assert!((rayleigh_sigma(50, 50, InitCriterion::Glorot) - 0.1).abs() < 1e-15);
        assert!((rayleigh_sigma(25, 7, InitCriterion::He) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn mean_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let (re, im) = complex_init::<f64, _>(&[n], 50, 50, InitCriterion::Glorot, &mut rng);
        let bound = 3.0 * 0.1 / (n as f64).sqrt();
        assert!(re.mean().unwrap().abs() < bound);
        assert!(im.mean().unwrap().abs() < bound);
    }

    #[test]
    fn deterministic() {
        let a = complex_init::<f32, _>(&[4, 3], 3, 4, InitCriterion::He, &mut ChaCha8Rng::seed_from_u64(1));
        let b = complex_init::<f32, _>(&[4, 3], 3, 4, InitCriterion::He, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }
}

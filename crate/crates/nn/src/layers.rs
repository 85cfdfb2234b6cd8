//! Real-valued layers for the ANN/CNN baselines and the classifier heads.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::error::{shape_err, Result};
use crate::init::he_uniform;
use crate::params::{ParamId, ParamKind, ParamStore, Plane};
use crate::real::Real;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.add(
                format!("{name}.weight"),
                he_uniform(&[out_features, in_features], in_features, rng),
                ParamKind::Weight,
                Plane::Real,
            ),
            b: store.add(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[out_features])), ParamKind::Bias, Plane::Real),
            in_features,
            out_features,
        }
    }

    pub fn shapes(name: &str, in_features: usize, out_features: usize) -> Vec<(String, Vec<usize>, ParamKind)> {
        vec![
            (format!("{name}.weight"), vec![out_features, in_features], ParamKind::Weight),
            (format!("{name}.bias"), vec![out_features], ParamKind::Bias),
        ]
    }

    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = tape.matmul_nt(x, tape.param(store, self.w))?;
        tape.add(y, tape.param(store, self.b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.add(
                format!("{name}.weight"),
                he_uniform(&[out_ch, in_ch, kernel], in_ch * kernel, rng),
                ParamKind::Weight,
                Plane::Real,
            ),
            b: store.add(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[out_ch])), ParamKind::Bias, Plane::Real),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        }
    }

    pub fn shapes(name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Vec<(String, Vec<usize>, ParamKind)> {
        vec![
            (format!("{name}.weight"), vec![out_ch, in_ch, kernel], ParamKind::Weight),
            (format!("{name}.bias"), vec![out_ch], ParamKind::Bias),
        ]
    }

    /// `[B, C_in, L]` to `[B, C_out, L_out]`.
    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let xs = tape.shape(x);
        if xs.len() != 3 || xs[1] != self.in_ch {
            return Err(shape_err("conv1d input", &xs, &[0, self.in_ch, 0]));
        }
        let y = tape.conv1d(x, tape.param(store, self.w), self.stride, self.padding)?;
        tape.add(y, tape.reshape(tape.param(store, self.b), &[self.out_ch, 1])?)
    }
}

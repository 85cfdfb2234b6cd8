//! Complex-valued layers on two-plane tensors.
//!
//! A [`CTensor`] is a pair of same-shape real tensors, plane A (real) and
//! plane B (imaginary). A complex weight `W = A + jB` applied to `x + jy`
//! yields `A·x − B·y` on plane A and `B·x + A·y` on plane B.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::init::{complex_init, InitCriterion};
use crate::params::{ParamId, ParamKind, ParamStore, Plane};
use crate::real::Real;
use crate::tape::{PoolKind, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CTensor {
    pub a: Var,
    pub b: Var,
}

impl CTensor {
    pub fn new(a: Var, b: Var) -> Self {
        Self { a, b }
    }

    pub fn constant<T: Real>(tape: &Tape<T>, a: ArrayD<T>, b: ArrayD<T>) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(shape_err("complex planes", a.shape(), b.shape()));
        }
        Ok(Self::new(tape.constant(a), tape.constant(b)))
    }

    pub fn shape<T: Real>(&self, tape: &Tape<T>) -> Vec<usize> {
        tape.shape(self.a)
    }

    pub fn map<T: Real>(&self, f: impl Fn(Var) -> Result<Var>) -> Result<Self> {
        Ok(Self::new(f(self.a)?, f(self.b)?))
    }
}

/// `W·x + bias` on the last axis of a `[N, in]` input. `w` planes are
/// `[out, in]`, bias planes `[out]`.
pub fn complex_linear<T: Real>(tape: &Tape<T>, x: CTensor, w: CTensor, bias: Option<CTensor>) -> Result<CTensor> {
    let (xs, ws) = (x.shape(tape), w.shape(tape));
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(shape_err("complex_linear input [N, in] vs weight [out, in]", &xs, &ws));
    }
    let xa_a = tape.matmul_nt(x.a, w.a)?;
    let xb_b = tape.matmul_nt(x.b, w.b)?;
    let xa_b = tape.matmul_nt(x.a, w.b)?;
    let xb_a = tape.matmul_nt(x.b, w.a)?;
    let mut out = CTensor::new(tape.sub(xa_a, xb_b)?, tape.add(xa_b, xb_a)?);
    if let Some(bias) = bias {
        out = CTensor::new(tape.add(out.a, bias.a)?, tape.add(out.b, bias.b)?);
    }
    Ok(out)
}

/// 1-d convolution of `[B, C_in, L]` with `[C_out, C_in, k]` kernels.
pub fn complex_conv1d<T: Real>(
    tape: &Tape<T>,
    x: CTensor,
    w: CTensor,
    bias: Option<CTensor>,
    stride: usize,
    padding: usize,
) -> Result<CTensor> {
    let (xs, ws) = (x.shape(tape), w.shape(tape));
    if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
        return Err(shape_err("complex_conv1d input [B, C, L] vs kernel [O, C, k]", &xs, &ws));
    }
    let conv = |x, w| tape.conv1d(x, w, stride, padding);
    let mut out = CTensor::new(
        tape.sub(conv(x.a, w.a)?, conv(x.b, w.b)?)?,
        tape.add(conv(x.a, w.b)?, conv(x.b, w.a)?)?,
    );
    if let Some(bias) = bias {
        let col = |p| tape.reshape(p, &[ws[0], 1]);
        out = CTensor::new(tape.add(out.a, col(bias.a)?)?, tape.add(out.b, col(bias.b)?)?);
    }
    Ok(out)
}

/// `ReLU` on each plane.
pub fn crelu<T: Real>(tape: &Tape<T>, z: CTensor) -> CTensor {
    CTensor::new(tape.relu(z.a), tape.relu(z.b))
}

/// Passes `z` where both planes are `>= 0`, zero elsewhere. Gradient is
/// zero on the quadrant boundary.
pub fn zrelu<T: Real>(tape: &Tape<T>, z: CTensor) -> Result<CTensor> {
    let (value_mask, grad_mask) = {
        let (a, b) = (tape.value(z.a), tape.value(z.b));
        let mut vm = ArrayD::zeros(a.raw_dim());
        let mut gm = ArrayD::zeros(a.raw_dim());
        ndarray::Zip::from(&mut vm).and(&mut gm).and(&*a).and(&*b).for_each(|v, g, &x, &y| {
            if x >= T::zero() && y >= T::zero() {
                *v = T::one();
            }
            if x > T::zero() && y > T::zero() {
                *g = T::one();
            }
        });
        (vm, gm)
    };
    Ok(CTensor::new(
        tape.mask_mul(z.a, &value_mask, grad_mask.clone())?,
        tape.mask_mul(z.b, &value_mask, grad_mask)?,
    ))
}

/// Pools each plane of `[B, C, L]` independently.
pub fn complex_pool1d<T: Real>(tape: &Tape<T>, z: CTensor, kind: PoolKind, window: usize, stride: usize) -> Result<CTensor> {
    z.map::<T>(|p| tape.pool1d(p, kind, window, stride))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexLinear {
    pub wa: ParamId,
    pub wb: ParamId,
    pub ba: ParamId,
    pub bb: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl ComplexLinear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        criterion: InitCriterion,
        rng: &mut R,
    ) -> Self {
        let (a, b) = complex_init(&[out_features, in_features], in_features, out_features, criterion, rng);
        Self {
            wa: store.add(format!("{name}.weight_a"), a, ParamKind::Weight, Plane::A),
            wb: store.add(format!("{name}.weight_b"), b, ParamKind::Weight, Plane::B),
            ba: store.add(format!("{name}.bias_a"), ArrayD::zeros(IxDyn(&[out_features])), ParamKind::Bias, Plane::A),
            bb: store.add(format!("{name}.bias_b"), ArrayD::zeros(IxDyn(&[out_features])), ParamKind::Bias, Plane::B),
            in_features,
            out_features,
        }
    }

    pub fn shapes(name: &str, in_features: usize, out_features: usize) -> Vec<(String, Vec<usize>, ParamKind)> {
        vec![
            (format!("{name}.weight_a"), vec![out_features, in_features], ParamKind::Weight),
            (format!("{name}.weight_b"), vec![out_features, in_features], ParamKind::Weight),
            (format!("{name}.bias_a"), vec![out_features], ParamKind::Bias),
            (format!("{name}.bias_b"), vec![out_features], ParamKind::Bias),
        ]
    }

    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: CTensor) -> Result<CTensor> {
        let w = CTensor::new(tape.param(store, self.wa), tape.param(store, self.wb));
        let b = CTensor::new(tape.param(store, self.ba), tape.param(store, self.bb));
        complex_linear(tape, x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexConv1d {
    pub wa: ParamId,
    pub wb: ParamId,
    pub ba: ParamId,
    pub bb: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ComplexConv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        criterion: InitCriterion,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::InvalidParameter(format!("kernel {kernel} stride {stride}")));
        }
        let (a, b) = complex_init(&[out_ch, in_ch, kernel], in_ch * kernel, out_ch * kernel, criterion, rng);
        Ok(Self {
            wa: store.add(format!("{name}.weight_a"), a, ParamKind::Weight, Plane::A),
            wb: store.add(format!("{name}.weight_b"), b, ParamKind::Weight, Plane::B),
            ba: store.add(format!("{name}.bias_a"), ArrayD::zeros(IxDyn(&[out_ch])), ParamKind::Bias, Plane::A),
            bb: store.add(format!("{name}.bias_b"), ArrayD::zeros(IxDyn(&[out_ch])), ParamKind::Bias, Plane::B),
            kernel,
            stride,
            padding,
        })
    }

    pub fn shapes(name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Vec<(String, Vec<usize>, ParamKind)> {
        vec![
            (format!("{name}.weight_a"), vec![out_ch, in_ch, kernel], ParamKind::Weight),
            (format!("{name}.weight_b"), vec![out_ch, in_ch, kernel], ParamKind::Weight),
            (format!("{name}.bias_a"), vec![out_ch], ParamKind::Bias),
            (format!("{name}.bias_b"), vec![out_ch], ParamKind::Bias),
        ]
    }

    pub fn forward<T: Real>(&self, tape: &Tape<T>, store: &ParamStore<T>, x: CTensor) -> Result<CTensor> {
        let w = CTensor::new(tape.param(store, self.wa), tape.param(store, self.wb));
        let b = CTensor::new(tape.param(store, self.ba), tape.param(store, self.bb));
        complex_conv1d(tape, x, w, Some(b), self.stride, self.padding)
    }
}

/// A new value for a buffer, applied by the trainer after the step.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferUpdate<T> {
    pub id: ParamId,
    pub value: ArrayD<T>,
}

/// Whitened batch plus the statistics it was computed from.
pub struct Whitened<T> {
    pub x: CTensor,
    pub mean_a: ArrayD<T>,
    pub mean_b: ArrayD<T>,
    /// Biased batch covariance `[V_rr, V_ri, V_ii]`, without ε.
    pub cov: [ArrayD<T>; 3],
}

fn stats_shape(shape: &[usize]) -> Vec<usize> {
    shape.iter().enumerate().map(|(i, &n)| if i == 1 { n } else { 1 }).collect()
}

fn stats_axes(ndim: usize) -> Vec<usize> {
    (0..ndim).filter(|&i| i != 1).collect()
}

/// Inverse square root of the symmetric 2×2 matrix `[[rr, ri], [ri, ii]]`:
/// with `s = sqrt(det)` and `t = sqrt(tr + 2s)`,
/// `M^(-1/2) = [[ii + s, -ri], [-ri, rr + s]] / (s t)`.
pub fn inv_sqrt_2x2(rr: f64, ri: f64, ii: f64) -> [f64; 3] {
    let s = (rr * ii - ri * ri).sqrt();
    let t = (rr + ii + 2.0 * s).sqrt();
    let k = 1.0 / (s * t);
    [(ii + s) * k, -ri * k, (rr + s) * k]
}

/// Centers each feature (axis 1) and multiplies by `(V + εI)^(-1/2)` using
/// batch statistics over every other axis.
pub fn whiten<T: Real>(tape: &Tape<T>, x: CTensor, eps: T) -> Result<Whitened<T>> {
    let shape = x.shape(tape);
    if shape.len() < 2 {
        return Err(Error::Shape(format!("batch norm expects [B, F, ...], got {shape:?}")));
    }
    let n: usize = shape.iter().enumerate().filter(|(i, _)| *i != 1).map(|(_, n)| n).product();
    if n < 2 {
        return Err(Error::InsufficientBatch { batch: n });
    }
    let axes = stats_axes(shape.len());
    let mu_a = tape.mean_axes(x.a, &axes)?;
    let mu_b = tape.mean_axes(x.b, &axes)?;
    let ca = tape.sub(x.a, mu_a)?;
    let cb = tape.sub(x.b, mu_b)?;
    let v_rr = tape.mean_axes(tape.mul(ca, ca)?, &axes)?;
    let v_ri = tape.mean_axes(tape.mul(ca, cb)?, &axes)?;
    let v_ii = tape.mean_axes(tape.mul(cb, cb)?, &axes)?;
    let rr = tape.add_scalar(v_rr, eps);
    let ii = tape.add_scalar(v_ii, eps);

    let det = tape.sub(tape.mul(rr, ii)?, tape.mul(v_ri, v_ri)?)?;
    let s = tape.sqrt(det);
    let t = tape.sqrt(tape.add(tape.add(rr, ii)?, tape.scale(s, T::of(2.0)))?);
    let st = tape.mul(s, t)?;
    let w_rr = tape.div(tape.add(ii, s)?, st)?;
    let w_ii = tape.div(tape.add(rr, s)?, st)?;
    let w_ri = tape.neg(tape.div(v_ri, st)?);

    let xa = tape.add(tape.mul(w_rr, ca)?, tape.mul(w_ri, cb)?)?;
    let xb = tape.add(tape.mul(w_ri, ca)?, tape.mul(w_ii, cb)?)?;
    let grab = |v: Var| tape.value(v).clone();
    Ok(Whitened {
        x: CTensor::new(xa, xb),
        mean_a: grab(mu_a),
        mean_b: grab(mu_b),
        cov: [grab(v_rr), grab(v_ri), grab(v_ii)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexBatchNorm {
    pub features: usize,
    pub gamma_rr: ParamId,
    pub gamma_ri: ParamId,
    pub gamma_ii: ParamId,
    pub beta_a: ParamId,
    pub beta_b: ParamId,
    pub mean_a: ParamId,
    pub mean_b: ParamId,
    pub var_rr: ParamId,
    pub var_ri: ParamId,
    pub var_ii: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

pub const BN_EPS: f64 = 1e-4;
pub const BN_MOMENTUM: f64 = 0.1;

impl ComplexBatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, features: usize) -> Self {
        let full = |v: f64| ArrayD::from_elem(IxDyn(&[features]), T::of(v));
        let g = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            features,
            gamma_rr: store.add(format!("{name}.gamma_rr"), full(g), ParamKind::Bias, Plane::Real),
            gamma_ri: store.add(format!("{name}.gamma_ri"), full(0.0), ParamKind::Bias, Plane::Real),
            gamma_ii: store.add(format!("{name}.gamma_ii"), full(g), ParamKind::Bias, Plane::Real),
            beta_a: store.add(format!("{name}.beta_a"), full(0.0), ParamKind::Bias, Plane::A),
            beta_b: store.add(format!("{name}.beta_b"), full(0.0), ParamKind::Bias, Plane::B),
            mean_a: store.add(format!("{name}.running_mean_a"), full(0.0), ParamKind::Buffer, Plane::A),
            mean_b: store.add(format!("{name}.running_mean_b"), full(0.0), ParamKind::Buffer, Plane::B),
            var_rr: store.add(format!("{name}.running_v_rr"), full(1.0), ParamKind::Buffer, Plane::Real),
            var_ri: store.add(format!("{name}.running_v_ri"), full(0.0), ParamKind::Buffer, Plane::Real),
            var_ii: store.add(format!("{name}.running_v_ii"), full(1.0), ParamKind::Buffer, Plane::Real),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn shapes(name: &str, features: usize) -> Vec<(String, Vec<usize>, ParamKind)> {
        let mut v: Vec<_> = ["gamma_rr", "gamma_ri", "gamma_ii", "beta_a", "beta_b"]
            .iter()
            .map(|s| (format!("{name}.{s}"), vec![features], ParamKind::Bias))
            .collect();
        v.extend(
            ["running_mean_a", "running_mean_b", "running_v_rr", "running_v_ri", "running_v_ii"]
                .iter()
                .map(|s| (format!("{name}.{s}"), vec![features], ParamKind::Buffer)),
        );
        v
    }

    /// Training mode whitens with batch statistics and queues running-stat
    /// updates; eval mode uses the running statistics.
    pub fn forward<T: Real>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        x: CTensor,
        training: bool,
        updates: &mut Vec<BufferUpdate<T>>,
    ) -> Result<CTensor> {
        let shape = x.shape(tape);
        if shape.len() < 2 || shape[1] != self.features {
            return Err(Error::Shape(format!(
                "batch norm over {} features got input {shape:?}",
                self.features
            )));
        }
        let sshape = stats_shape(&shape);
        let eps = T::of(self.eps);
        let xw = if training {
            let w = whiten(tape, x, eps)?;
            let m = T::of(self.momentum);
            let keep = T::one() - m;
            let mut queue = |id: ParamId, batch: &ArrayD<T>| {
                let b = batch.to_shape(IxDyn(&[self.features])).expect("stats shape").to_owned();
                updates.push(BufferUpdate {
                    id,
                    value: store.value(id).mapv(|v| v * keep) + b.mapv(|v| v * m),
                });
            };
            queue(self.mean_a, &w.mean_a);
            queue(self.mean_b, &w.mean_b);
            queue(self.var_rr, &w.cov[0]);
            queue(self.var_ri, &w.cov[1]);
            queue(self.var_ii, &w.cov[2]);
            w.x
        } else {
            let n = self.features;
            let (mut wrr, mut wri, mut wii) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            let (vrr, vri, vii) = (store.value(self.var_rr), store.value(self.var_ri), store.value(self.var_ii));
            for f in 0..n {
                let w = inv_sqrt_2x2(vrr[f].f64() + self.eps, vri[f].f64(), vii[f].f64() + self.eps);
                wrr.push(T::of(w[0]));
                wri.push(T::of(w[1]));
                wii.push(T::of(w[2]));
            }
            let c = |v: Vec<T>| tape.constant(ArrayD::from_shape_vec(IxDyn(&sshape), v).expect("stats shape"));
            let stat = |id: ParamId| c(store.value(id).iter().copied().collect());
            let ca = tape.sub(x.a, stat(self.mean_a))?;
            let cb = tape.sub(x.b, stat(self.mean_b))?;
            let (wrr, wri, wii) = (c(wrr), c(wri), c(wii));
            CTensor::new(
                tape.add(tape.mul(wrr, ca)?, tape.mul(wri, cb)?)?,
                tape.add(tape.mul(wri, ca)?, tape.mul(wii, cb)?)?,
            )
        };
        let p = |id: ParamId| tape.reshape(tape.param(store, id), &sshape);
        let (grr, gri, gii) = (p(self.gamma_rr)?, p(self.gamma_ri)?, p(self.gamma_ii)?);
        let (ba, bb) = (p(self.beta_a)?, p(self.beta_b)?);
        let oa = tape.add(tape.add(tape.mul(grr, xw.a)?, tape.mul(gri, xw.b)?)?, ba)?;
        let ob = tape.add(tape.add(tape.mul(gri, xw.a)?, tape.mul(gii, xw.b)?)?, bb)?;
        Ok(CTensor::new(oa, ob))
    }
}

pub fn apply_updates<T: Real>(store: &mut ParamStore<T>, updates: Vec<BufferUpdate<T>>) -> Result<()> {
    for u in updates {
        store.set(u.id, u.value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn c1(tape: &Tape<f64>, a: &[f64], b: &[f64], shape: &[usize]) -> CTensor {
        CTensor::constant(
            tape,
            ArrayD::from_shape_vec(IxDyn(shape), a.to_vec()).unwrap(),
            ArrayD::from_shape_vec(IxDyn(shape), b.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn planes(tape: &Tape<f64>, z: CTensor) -> (Vec<f64>, Vec<f64>) {
        (tape.value(z.a).iter().copied().collect(), tape.value(z.b).iter().copied().collect())
    }

    #[test]
    fn linear_one_plus_j_times_two_plus_3j() {
        let t = Tape::new();
        let w = c1(&t, &[1.0], &[1.0], &[1, 1]);
        let x = c1(&t, &[2.0], &[3.0], &[1, 1]);
        let y = complex_linear(&t, x, w, None).unwrap();
        assert_eq!(planes(&t, y), (vec![-1.0], vec![5.0]));
    }

    #[test]
    fn linear_identity_and_j() {
        let t = Tape::new();
        let x = c1(&t, &[0.3, -1.2], &[0.7, 2.5], &[1, 2]);
        let id = c1(&t, &[1.0, 0.0, 0.0, 1.0], &[0.0; 4], &[2, 2]);
        assert_eq!(planes(&t, complex_linear(&t, x, id, None).unwrap()), planes(&t, x));
        let j = c1(&t, &[0.0; 4], &[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let r = complex_linear(&t, x, j, None).unwrap();
        assert_eq!(planes(&t, r), (vec![-0.7, -2.5], vec![0.3, -1.2]));
    }

    #[test]
    fn diagonal_phase_weight_is_rotation() {
        let t = Tape::new();
        let th = 0.7f64;
        let xs = [Complex64::new(0.2, -0.4), Complex64::new(1.5, 0.9)];
        let x = c1(&t, &[xs[0].re, xs[1].re], &[xs[0].im, xs[1].im], &[1, 2]);
        let w = c1(&t, &[th.cos(), 0.0, 0.0, th.cos()], &[th.sin(), 0.0, 0.0, th.sin()], &[2, 2]);
        let (a, b) = planes(&t, complex_linear(&t, x, w, None).unwrap());
        for i in 0..2 {
            let r = xs[i] * Complex64::from_polar(1.0, th);
            assert_eq!((a[i], b[i]), (r.re, r.im));
        }
    }

    #[test]
    fn linear_shape_error_names_dims() {
        let t = Tape::new();
        let x = c1(&t, &[0.0; 3], &[0.0; 3], &[1, 3]);
        let w = c1(&t, &[0.0; 4], &[0.0; 4], &[2, 2]);
        let e = complex_linear(&t, x, w, None).unwrap_err().to_string();
        assert!(e.contains("[1, 3]") && e.contains("[2, 2]"), "{e}");
    }

    #[test]
    fn conv_identity_tap_and_full_kernel() {
        let t = Tape::new();
        let xa = [0.1, 0.2, -0.3, 0.4];
        let xb = [1.0, -2.0, 3.0, 0.5];
        let x = c1(&t, &xa, &xb, &[1, 1, 4]);
        let tap = c1(&t, &[1.0], &[0.0], &[1, 1, 1]);
        let y = complex_conv1d(&t, x, tap, None, 1, 0).unwrap();
        assert_eq!(planes(&t, y), (xa.to_vec(), xb.to_vec()));

        let wa = [0.5, -1.0, 0.25, 2.0];
        let wb = [0.0, 1.0, -1.5, 0.5];
        let w = c1(&t, &wa, &wb, &[1, 1, 4]);
        let y = complex_conv1d(&t, x, w, None, 1, 0).unwrap();
        let lin = complex_linear(
            &t,
            c1(&t, &xa, &xb, &[1, 4]),
            c1(&t, &wa, &wb, &[1, 4]),
            None,
        )
        .unwrap();
        assert_eq!(t.shape(y.a), vec![1, 1, 1]);
        assert_eq!(planes(&t, y), planes(&t, lin));
    }

    #[test]
    fn conv_output_length() {
        let t = Tape::new();
        let x = c1(&t, &[0.0; 2 * 3 * 50], &[0.0; 2 * 3 * 50], &[2, 3, 50]);
        let w = c1(&t, &[0.0; 4 * 3 * 7], &[0.0; 4 * 3 * 7], &[4, 3, 7]);
        let y = complex_conv1d(&t, x, w, None, 3, 1).unwrap();
        assert_eq!(t.shape(y.a), vec![2, 4, (50 + 2 - 7) / 3 + 1]);
    }

    #[test]
    fn activations_on_quadrants() {
        let t = Tape::new();
        let z = c1(&t, &[3.0, -3.0, 3.0], &[4.0, 4.0, -4.0], &[3]);
        assert_eq!(planes(&t, crelu(&t, z)), (vec![3.0, 0.0, 3.0], vec![4.0, 4.0, 0.0]));
        assert_eq!(planes(&t, zrelu(&t, z).unwrap()), (vec![3.0, 0.0, 0.0], vec![4.0, 0.0, 0.0]));
    }

    #[test]
    fn activations_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = Tape::new();
        let a: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = c1(&t, &a, &b, &[64]);
        let once = zrelu(&t, z).unwrap();
        assert_eq!(planes(&t, zrelu(&t, once).unwrap()), planes(&t, once));
        let once = crelu(&t, z);
        assert_eq!(planes(&t, crelu(&t, once)), planes(&t, once));
    }

    #[test]
    fn crelu_gradient_at_minus3_plus_4j() {
        let t = Tape::new();
        let z = CTensor::new(t.var(array![-3.0].into_dyn()), t.var(array![4.0].into_dyn()));
        let y = crelu(&t, z);
        let s = t.add(t.sum(y.a), t.sum(y.b)).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(z.a).unwrap()[[0]], 0.0);
        assert_eq!(g.wrt(z.b).unwrap()[[0]], 1.0);
    }

    #[test]
    fn zrelu_boundary_subgradient_zero() {
        let t = Tape::new();
        let z = CTensor::new(t.var(array![0.0].into_dyn()), t.var(array![2.0].into_dyn()));
        let y = zrelu(&t, z).unwrap();
        assert_eq!(t.value(y.b)[[0]], 2.0);
        let s = t.add(t.sum(y.a), t.sum(y.b)).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(z.b).unwrap()[[0]], 0.0);
    }

    #[test]
    fn inv_sqrt_squares_to_inverse() {
        let (rr, ri, ii) = (2.0, 0.3, 0.5);
        let [a, b, d] = inv_sqrt_2x2(rr, ri, ii);
        // W·W·M = I
        let w2 = [a * a + b * b, a * b + b * d, b * b + d * d];
        let p = [w2[0] * rr + w2[1] * ri, w2[0] * ri + w2[1] * ii, w2[1] * ri + w2[2] * ii];
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12 && (p[2] - 1.0).abs() < 1e-12);
    }

    fn bn_store(features: usize) -> (ParamStore<f64>, ComplexBatchNorm) {
        let mut s = ParamStore::new();
        let bn = ComplexBatchNorm::new(&mut s, "bn", features);
        (s, bn)
    }

    #[test]
    fn constant_batch_passes_beta() {
        let (mut s, bn) = bn_store(1);
        s.set(bn.beta_a, array![0.5].into_dyn()).unwrap();
        let t = Tape::new();
        let x = c1(&t, &[1.3; 6], &[-0.2; 6], &[6, 1]);
        let y = bn.forward(&t, &s, x, true, &mut Vec::new()).unwrap();
        let (a, b) = planes(&t, y);
        // the batch mean carries one rounding step, amplified by 1/sqrt(eps)
        assert!(a.iter().all(|&v| (v - 0.5).abs() < 1e-12) && b.iter().all(|&v| v.abs() < 1e-12), "{a:?} {b:?}");
    }

    #[test]
    fn batch_of_one_rejected() {
        let (s, bn) = bn_store(1);
        let t = Tape::new();
        let x = c1(&t, &[1.0], &[2.0], &[1, 1]);
        let e = bn.forward(&t, &s, x, true, &mut Vec::new()).unwrap_err();
        assert!(e.to_string().contains("insufficient batch for covariance"));
    }

    fn gaussian_batch(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let mut g = || -> f64 { StandardNormal.sample(rng) };
        let a: Vec<f64> = (0..n).map(|_| g() * std::f64::consts::FRAC_1_SQRT_2).collect();
        let b: Vec<f64> = (0..n).map(|_| g() * std::f64::consts::FRAC_1_SQRT_2).collect();
        (a, b)
    }

    fn cov(a: &[f64], b: &[f64]) -> [f64; 3] {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let rr = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let ii = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
        let ri = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        [rr, ri, ii]
    }

    #[test]
    fn output_covariance_identity_and_trabelsi_default() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a, b) = gaussian_batch(10_000, &mut rng);
        let (mut s, bn) = bn_store(1);
        let t = Tape::new();
        let x = c1(&t, &a, &b, &[10_000, 1]);
        let y = bn.forward(&t, &s, x, true, &mut Vec::new()).unwrap();
        let (oa, ob) = planes(&t, y);
        let c = cov(&oa, &ob);
        assert!((c[0] - 0.5).abs() < 1e-2 && c[1].abs() < 1e-2 && (c[2] - 0.5).abs() < 1e-2, "{c:?}");

        s.set(bn.gamma_rr, array![1.0].into_dyn()).unwrap();
        s.set(bn.gamma_ii, array![1.0].into_dyn()).unwrap();
        let t = Tape::new();
        let x = c1(&t, &a, &b, &[10_000, 1]);
        let y = bn.forward(&t, &s, x, true, &mut Vec::new()).unwrap();
        let (oa, ob) = planes(&t, y);
        let c = cov(&oa, &ob);
        assert!((c[0] - 1.0).abs() < 1e-2 && c[1].abs() < 1e-2 && (c[2] - 1.0).abs() < 1e-2, "{c:?}");
    }

    #[test]
    fn running_stats_move_by_momentum() {
        let (mut s, bn) = bn_store(1);
        let t = Tape::new();
        let x = c1(&t, &[1.0, 3.0], &[0.0, 0.0], &[2, 1]);
        let mut up = Vec::new();
        bn.forward(&t, &s, x, true, &mut up).unwrap();
        apply_updates(&mut s, up).unwrap();
        assert!((s.value(bn.mean_a)[[0]] - 0.2).abs() < 1e-12);
        assert!((s.value(bn.var_rr)[[0]] - (0.9 + 0.1)).abs() < 1e-12);
        assert!((s.value(bn.var_ii)[[0]] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let (s, bn) = bn_store(2);
        let t = Tape::new();
        let x = c1(&t, &[0.5, -0.5], &[1.0, 2.0], &[1, 2]);
        let y = bn.forward(&t, &s, x, false, &mut Vec::new()).unwrap();
        // running V = I, mean 0: output = gamma * x / sqrt(1 + eps)
        let k = std::f64::consts::FRAC_1_SQRT_2 / (1.0 + BN_EPS).sqrt();
        let (a, _) = planes(&t, y);
        assert!((a[0] - 0.5 * k).abs() < 1e-12, "{a:?}");
    }
}

//! Adam (no amsgrad) with decoupled weight decay, and plain SGD.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::real::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Option<ArrayD<T>>>,
    v: Vec<Option<ArrayD<T>>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        Self {
            kind,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Nothing is written if any gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, ArrayD<T>)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", store.get(*id).name)));
            }
            if g.shape() != store.value(*id).shape() {
                return Err(crate::error::shape_err("gradient", g.shape(), store.value(*id).shape()));
            }
        }
        self.step += 1;
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        let t = self.step as i32;
        let lr_t = T::of(lr);
        let decay = T::of(1.0 - lr * self.weight_decay);
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        let bc1 = T::of(1.0 - ADAM_BETA1.powi(t));
        let bc2 = T::of(1.0 - ADAM_BETA2.powi(t));
        let eps = T::of(ADAM_EPS);
        for (id, g) in grads {
            let kind = store.get(*id).kind;
            if kind == ParamKind::Buffer {
                continue;
            }
            let p = store.value_mut(*id);
            if kind == ParamKind::Weight && self.weight_decay != 0.0 {
                p.mapv_inplace(|x| x * decay);
            }
            match self.kind {
                OptimizerKind::Sgd => p.zip_mut_with(g, |x, &gi| *x -= lr_t * gi),
                OptimizerKind::Adam => {
                    let m = self.m[id.0].get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
                    m.zip_mut_with(g, |mi, &gi| *mi = b1 * *mi + (T::one() - b1) * gi);
                    let v = self.v[id.0].get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
                    v.zip_mut_with(g, |vi, &gi| *vi = b2 * *vi + (T::one() - b2) * gi * gi);
                    ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|x, &mi, &vi| {
                        *x -= lr_t * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                    });
                }
            }
        }
        if !grads.iter().all(|(id, _)| store.value(*id).iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Plane;
    use ndarray::{array, IxDyn};

    fn one(kind: ParamKind, v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", ArrayD::from_elem(IxDyn(&[1]), v), kind, Plane::Real);
        (s, id)
    }

    #[test]
    fn adam_first_step_is_minus_lr() {
        let (mut s, id) = one(ParamKind::Bias, 0.3);
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.0);
        o.step(&mut s, &[(id, array![1.0].into_dyn())], 1e-3).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let want = 0.3 - 1e-3 / (1.0 + ADAM_EPS);
        assert!((s.value(id)[[0]] - want).abs() < 1e-15);
    }

    #[test]
    fn adam_matches_closed_form_over_steps() {
        let (mut s, id) = one(ParamKind::Bias, 0.0);
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.0);
        let gs = [0.5, -1.0, 2.0];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for (k, &g) in gs.iter().enumerate() {
            o.step(&mut s, &[(id, array![g].into_dyn())], 0.01).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (k + 1) as i32;
            x -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        assert!((s.value(id)[[0]] - x).abs() < 1e-14);
    }

    #[test]
    fn zero_grads_no_decay_unchanged() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let (mut s, id) = one(ParamKind::Weight, 1.25);
            let mut o = Optimizer::new(kind, 0.0);
            o.step(&mut s, &[(id, array![0.0].into_dyn())], 0.1).unwrap();
            assert_eq!(s.value(id)[[0]], 1.25);
        }
    }

    #[test]
    fn sgd_arithmetic() {
        let (mut s, id) = one(ParamKind::Weight, 1.0);
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.0);
        o.step(&mut s, &[(id, array![2.0].into_dyn())], 0.1).unwrap();
        assert!((s.value(id)[[0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn decay_touches_weights_only() {
        let (mut s, w) = one(ParamKind::Weight, 2.0);
        let b = s.add("b", array![2.0].into_dyn(), ParamKind::Bias, Plane::Real);
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.5);
        let z = array![0.0].into_dyn();
        o.step(&mut s, &[(w, z.clone()), (b, z)], 0.1).unwrap();
        assert!((s.value(w)[[0]] - 2.0 * 0.95).abs() < 1e-15);
        assert_eq!(s.value(b)[[0]], 2.0);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let (mut s, id) = one(ParamKind::Weight, 1.0);
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.0);
        let e = o.step(&mut s, &[(id, array![f64::NAN].into_dyn())], 0.1).unwrap_err();
        assert!(matches!(e, Error::NonFinite(_)));
        assert_eq!(s.value(id)[[0]], 1.0);
        assert_eq!(o.steps(), 0);
    }
}

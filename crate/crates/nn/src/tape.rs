//! Reverse-mode differentiation over real n-d arrays.
//!
//! A [`Tape`] records every op as a node; [`Var`] is a cheap handle into it.
//! Complex quantities are carried as two real planes (see [`crate::complex`]),
//! so only real ops are needed here. Binary elementwise ops broadcast with
//! numpy rules and reduce gradients back to each input's shape.
//!
//! A tape supports one [`Tape::backward`] call; build a new tape per batch.

use std::cell::{Cell, Ref, RefCell};

use ndarray::{concatenate, ArrayD, ArrayViewD, Axis, Ix2, IxDyn, Slice};

use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var),
    Sqrt(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MaskMul(Var, ArrayD<T>),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    SumAll(Var),
    SumAxes(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Slice(Var, usize, usize),
    Concat(Vec<Var>, usize),
    Conv1d { x: Var, w: Var, stride: usize, pad: usize },
    Pool { x: Var, window: usize, stride: usize, argmax: Option<Vec<usize>> },
    Bce { logits: Var, targets: ArrayD<T> },
    Ce { logits: Var, probs: ArrayD<T>, labels: Vec<usize> },
}

struct Node<T> {
    value: ArrayD<T>,
    op: Op<T>,
    grad: bool,
    param: Option<ParamId>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    vars: Vec<Option<ArrayD<T>>>,
    params: Vec<(ParamId, ArrayD<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&ArrayD<T>> {
        self.vars.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&ArrayD<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn params(&self) -> &[(ParamId, ArrayD<T>)] {
        &self.params
    }
}

fn to2<T: Real>(a: &ArrayD<T>) -> ndarray::ArrayView2<'_, T> {
    a.view().into_dimensionality::<Ix2>().expect("2-d operand")
}

fn standard<T: Real>(a: ArrayD<T>) -> ArrayD<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Sums `g` down to `shape`, undoing broadcasting.
fn sum_to<T: Real>(g: ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    if g.shape() == shape {
        return g;
    }
    let mut g = g;
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (i, &n) in shape.iter().enumerate() {
        if n == 1 && g.shape()[i] != 1 {
            g = g.sum_axis(Axis(i)).insert_axis(Axis(i));
        }
    }
    g
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn pool_out_len(len: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 || window > len {
        return Err(Error::InvalidParameter(format!(
            "pool window {window} stride {stride} over length {len}"
        )));
    }
    Ok((len - window) / stride + 1)
}

pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 || len + 2 * pad < k {
        return Err(Error::InvalidParameter(format!(
            "kernel {k} stride {stride} padding {pad} over length {len}"
        )));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<T>, op: Op<T>, grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            grad,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].grad)
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&self, value: ArrayD<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives gradients.
    pub fn var(&self, value: ArrayD<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&self, x: T) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), x))
    }

    /// Leaf holding a copy of a stored parameter. Buffers become constants.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable());
        self.nodes.borrow_mut()[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> Ref<'_, ArrayD<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].grad
    }

    fn binary(&self, a: Var, b: Var, what: &str, f: impl Fn(&ArrayD<T>, &ArrayD<T>) -> ArrayD<T>, op: Op<T>) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if broadcast_shape(x.shape(), y.shape()).is_none() {
                return Err(shape_err(what, x.shape(), y.shape()));
            }
            f(x, y)
        };
        let g = self.needs(&[a, b]);
        Ok(self.push(value, op, g))
    }

    fn unary(&self, a: Var, f: impl Fn(&ArrayD<T>) -> ArrayD<T>, op: Op<T>) -> Var {
        let value = f(&self.nodes.borrow()[a.0].value);
        let g = self.needs(&[a]);
        self.push(value, op, g)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(|v| -v), Op::Neg(a))
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        self.unary(a, |x| x.mapv(|v| v * c), Op::Scale(a, c))
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        self.unary(a, |x| x.mapv(|v| v + c), Op::AddScalar(a))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(|v| v.sqrt()), Op::Sqrt(a))
    }

    /// `max(x, 0)`; subgradient 0 at 0.
    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(|v| if v > T::zero() { v } else { T::zero() }), Op::Relu(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(sigmoid), Op::Sigmoid(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.mapv(|v| v.tanh()), Op::Tanh(a))
    }

    /// `a * value_mask` with gradient `g * grad_mask`. Lets activations pick
    /// their own boundary subgradient.
    pub fn mask_mul(&self, a: Var, value_mask: &ArrayD<T>, grad_mask: ArrayD<T>) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if x.shape() != value_mask.shape() || x.shape() != grad_mask.shape() {
                return Err(shape_err("mask", x.shape(), value_mask.shape()));
            }
            x * value_mask
        };
        let g = self.needs(&[a]);
        Ok(self.push(value, Op::MaskMul(a, grad_mask), g))
    }

    /// 2-d product `a · b`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[0] {
                return Err(shape_err("matmul", x.shape(), y.shape()));
            }
            to2(x).dot(&to2(y)).into_dyn()
        };
        let g = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), g))
    }

    /// 2-d product `a · bᵀ`, the layout of `[out, in]` weight matrices.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[1] {
                return Err(shape_err("matmul_nt inner dims", x.shape(), y.shape()));
            }
            to2(x).dot(&to2(y).t()).into_dyn()
        };
        let g = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMulNt(a, b), g))
    }

    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, |x| ArrayD::from_elem(IxDyn(&[]), x.sum()), Op::SumAll(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.nodes.borrow()[a.0].value.len().max(1);
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let nd = self.nodes.borrow()[a.0].value.ndim();
        if axes.iter().any(|&ax| ax >= nd) {
            return Err(Error::Shape(format!("sum axes {axes:?} on {nd}-d tensor")));
        }
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        Ok(self.unary(
            a,
            |x| {
                let mut out = x.clone();
                for &ax in &sorted {
                    out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
                }
                out
            },
            Op::SumAxes(a),
        ))
    }

    pub fn mean_axes(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let n: usize = axes.iter().map(|&ax| shape.get(ax).copied().unwrap_or(1)).product();
        let s = self.sum_axes(a, axes)?;
        Ok(self.scale(s, T::one() / T::of(n.max(1) as f64)))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if x.len() != shape.iter().product::<usize>() {
                return Err(shape_err("reshape", x.shape(), shape));
            }
            standard(x.clone())
                .into_shape_with_order(IxDyn(shape))
                .expect("standard layout reshape")
        };
        let g = self.needs(&[a]);
        Ok(self.push(value, Op::Reshape(a), g))
    }

    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let mut seen = perm.to_vec();
            seen.sort_unstable();
            if seen != (0..x.ndim()).collect::<Vec<_>>() {
                return Err(Error::Shape(format!("permutation {perm:?} of {}-d tensor", x.ndim())));
            }
            x.view().permuted_axes(IxDyn(perm)).as_standard_layout().into_owned()
        };
        let g = self.needs(&[a]);
        Ok(self.push(value, Op::Permute(a, perm.to_vec()), g))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if axis >= x.ndim() || start + len > x.shape()[axis] {
                return Err(Error::Shape(format!(
                    "slice {start}..{} on axis {axis} of {:?}",
                    start + len,
                    x.shape()
                )));
            }
            x.slice_axis(Axis(axis), Slice::from(start..start + len)).to_owned()
        };
        let g = self.needs(&[a]);
        Ok(self.push(value, Op::Slice(a, axis, start), g))
    }

    pub fn concat(&self, vars: &[Var], axis: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<ArrayViewD<T>> = vars.iter().map(|v| nodes[v.0].value.view()).collect();
            concatenate(Axis(axis), &views).map_err(|e| Error::Shape(format!("concat: {e}")))?
        };
        let g = self.needs(vars);
        Ok(self.push(value, Op::Concat(vars.to_vec(), axis), g))
    }

    /// Cross-correlates `[B, C_in, L]` with `[C_out, C_in, k]` kernels,
    /// zero-padded by `pad` on both ends, giving `[B, C_out, L_out]`.
    pub fn conv1d(&self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
            if xv.ndim() != 3 || wv.ndim() != 3 || xv.shape()[1] != wv.shape()[1] {
                return Err(shape_err("conv1d input [B, C, L] vs kernel [O, C, k]", xv.shape(), wv.shape()));
            }
            let (b, c, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let (o, k) = (wv.shape()[0], wv.shape()[2]);
            let lo = conv_out_len(l, k, stride, pad)?;
            let (xs, ws) = (standard(xv.clone()), standard(wv.clone()));
            let (xs, ws) = (xs.as_slice().expect("contiguous"), ws.as_slice().expect("contiguous"));
            let mut out = vec![T::zero(); b * o * lo];
            for bi in 0..b {
                for oi in 0..o {
                    let y = &mut out[(bi * o + oi) * lo..(bi * o + oi + 1) * lo];
                    for ci in 0..c {
                        let src = &xs[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                        for j in 0..k {
                            let wj = ws[(oi * c + ci) * k + j];
                            let (t0, t1) = tap_span(j, stride, pad, l, lo);
                            if stride == 1 {
                                let p0 = t0 + j - pad;
                                for (yt, &xt) in y[t0..t1].iter_mut().zip(&src[p0..p0 + t1 - t0]) {
                                    *yt += wj * xt;
                                }
                            } else {
                                for t in t0..t1 {
                                    y[t] += wj * src[t * stride + j - pad];
                                }
                            }
                        }
                    }
                }
            }
            ArrayD::from_shape_vec(IxDyn(&[b, o, lo]), out).expect("conv1d shape")
        };
        let g = self.needs(&[x, w]);
        Ok(self.push(value, Op::Conv1d { x, w, stride, pad }, g))
    }

    /// Sliding-window reduction along the last axis of `[B, C, L]`.
    pub fn pool1d(&self, x: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        let (value, argmax) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            if xv.ndim() != 3 {
                return Err(Error::Shape(format!("pool1d expects [B, C, L], got {:?}", xv.shape())));
            }
            let (b, c, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let lo = pool_out_len(l, window, stride)?;
            let xs = standard(xv.clone());
            let src = xs.as_slice().expect("contiguous");
            let mut out = Vec::with_capacity(b * c * lo);
            let mut arg = Vec::new();
            let inv = T::one() / T::of(window as f64);
            for row in 0..b * c {
                let r = &src[row * l..(row + 1) * l];
                for t in 0..lo {
                    let w = &r[t * stride..t * stride + window];
                    match kind {
                        PoolKind::Avg => out.push(w.iter().copied().sum::<T>() * inv),
                        PoolKind::Max => {
                            let (mut bi, mut bv) = (0, w[0]);
                            for (i, &v) in w.iter().enumerate().skip(1) {
                                if v > bv {
                                    bi = i;
                                    bv = v;
                                }
                            }
                            out.push(bv);
                            arg.push(row * l + t * stride + bi);
                        }
                    }
                }
            }
            let value = ArrayD::from_shape_vec(IxDyn(&[b, c, lo]), out).expect("pool shape");
            (value, (kind == PoolKind::Max).then_some(arg))
        };
        let g = self.needs(&[x]);
        Ok(self.push(value, Op::Pool { x, window, stride, argmax }, g))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// averaged over every element.
    pub fn bce_with_logits(&self, logits: Var, targets: ArrayD<T>) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let z = &nodes[logits.0].value;
            if z.shape() != targets.shape() {
                return Err(shape_err("bce targets", z.shape(), targets.shape()));
            }
            let n = T::of(z.len().max(1) as f64);
            let total: T = z
                .iter()
                .zip(targets.iter())
                .map(|(&z, &y)| z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln())
                .sum();
            ArrayD::from_elem(IxDyn(&[]), total / n)
        };
        let g = self.needs(&[logits]);
        Ok(self.push(value, Op::Bce { logits, targets }, g))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class indices.
    pub fn softmax_ce(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (value, probs) = {
            let nodes = self.nodes.borrow();
            let z = &nodes[logits.0].value;
            if z.ndim() != 2 || z.shape()[0] != labels.len() {
                return Err(shape_err("softmax_ce logits/labels", z.shape(), &[labels.len()]));
            }
            let c = z.shape()[1];
            if labels.iter().any(|&y| y >= c) {
                return Err(Error::InvalidParameter(format!("label out of range for {c} classes")));
            }
            let mut probs = standard(z.clone());
            let mut total = T::zero();
            for (mut row, &y) in probs.outer_iter_mut().zip(labels) {
                let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                total = total - (row[y] / s).ln();
                row.mapv_inplace(|v| v / s);
            }
            let n = T::of(labels.len().max(1) as f64);
            (ArrayD::from_elem(IxDyn(&[]), total / n), probs)
        };
        let g = self.needs(&[logits]);
        Ok(self.push(
            value,
            Op::Ce {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            g,
        ))
    }

    /// Runs reverse accumulation from a scalar `loss`. Consumes the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed.get() {
            return Err(Error::GraphConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        if !root.grad {
            return Err(Error::Detached);
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<ArrayD<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::from_elem(root.value.raw_dim(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut give = |v: Var, d: ArrayD<T>| {
                if !nodes[v.0].grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    give(*a, sum_to(g.clone(), val(*a).shape()));
                    give(*b, sum_to(g, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    give(*a, sum_to(g.clone(), val(*a).shape()));
                    give(*b, sum_to(g.mapv(|v| -v), val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    if nodes[a.0].grad {
                        give(*a, sum_to(&g * val(*b), val(*a).shape()));
                    }
                    if nodes[b.0].grad {
                        give(*b, sum_to(&g * val(*a), val(*b).shape()));
                    }
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    if nodes[a.0].grad {
                        give(*a, sum_to(&g / y, x.shape()));
                    }
                    if nodes[b.0].grad {
                        let d = &(&g * &node.value) / y;
                        give(*b, sum_to(d.mapv(|v| -v), y.shape()));
                    }
                }
                Op::Neg(a) => give(*a, g.mapv(|v| -v)),
                Op::Scale(a, c) => {
                    let c = *c;
                    give(*a, g.mapv(|v| v * c))
                }
                Op::AddScalar(a) => give(*a, g),
                Op::Sqrt(a) => {
                    let half = T::of(0.5);
                    let mut d = g;
                    d.zip_mut_with(&node.value, |d, &y| *d = *d * half / y);
                    give(*a, d)
                }
                Op::Relu(a) => {
                    let mut d = g;
                    d.zip_mut_with(val(*a), |d, &x| {
                        if x <= T::zero() {
                            *d = T::zero()
                        }
                    });
                    give(*a, d)
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    d.zip_mut_with(&node.value, |d, &y| *d = *d * y * (T::one() - y));
                    give(*a, d)
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    d.zip_mut_with(&node.value, |d, &y| *d = *d * (T::one() - y * y));
                    give(*a, d)
                }
                Op::MaskMul(a, m) => give(*a, &g * m),
                Op::MatMul(a, b) => {
                    let g2 = to2(&g);
                    if nodes[a.0].grad {
                        give(*a, g2.dot(&to2(val(*b)).t()).into_dyn());
                    }
                    if nodes[b.0].grad {
                        give(*b, to2(val(*a)).t().dot(&g2).into_dyn());
                    }
                }
                Op::MatMulNt(a, b) => {
                    let g2 = to2(&g);
                    if nodes[a.0].grad {
                        give(*a, g2.dot(&to2(val(*b))).into_dyn());
                    }
                    if nodes[b.0].grad {
                        give(*b, g2.t().dot(&to2(val(*a))).into_dyn());
                    }
                }
                Op::SumAll(a) => {
                    let s = g.iter().next().copied().unwrap_or_else(T::zero);
                    give(*a, ArrayD::from_elem(val(*a).raw_dim(), s));
                }
                Op::SumAxes(a) => {
                    let shape = val(*a).raw_dim();
                    give(*a, g.broadcast(shape).expect("keepdim broadcast").to_owned());
                }
                Op::Reshape(a) => {
                    let shape = val(*a).raw_dim();
                    give(*a, standard(g).into_shape_with_order(shape).expect("reshape grad"));
                }
                Op::Permute(a, perm) => {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    give(*a, g.permuted_axes(IxDyn(&inv)).as_standard_layout().into_owned());
                }
                Op::Slice(a, axis, start) => {
                    let mut d = ArrayD::zeros(val(*a).raw_dim());
                    let len = g.shape()[*axis];
                    d.slice_axis_mut(Axis(*axis), Slice::from(*start..*start + len)).assign(&g);
                    give(*a, d)
                }
                Op::Concat(vars, axis) => {
                    let mut off = 0;
                    for v in vars {
                        let len = val(*v).shape()[*axis];
                        let part = g.slice_axis(Axis(*axis), Slice::from(off..off + len)).to_owned();
                        off += len;
                        give(*v, part);
                    }
                }
                Op::Conv1d { x, w, stride, pad } => {
                    let (stride, pad) = (*stride, *pad);
                    let (xv, wv) = (standard(val(*x).clone()), standard(val(*w).clone()));
                    let (b, c, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let (o, k) = (wv.shape()[0], wv.shape()[2]);
                    let lo = g.shape()[2];
                    let gs = standard(g);
                    let (gs, xs, ws) = (
                        gs.as_slice().expect("contiguous"),
                        xv.as_slice().expect("contiguous"),
                        wv.as_slice().expect("contiguous"),
                    );
                    let (want_x, want_w) = (nodes[x.0].grad, nodes[w.0].grad);
                    let mut dx = vec![T::zero(); if want_x { b * c * l } else { 0 }];
                    let mut dw = vec![T::zero(); if want_w { o * c * k } else { 0 }];
                    for bi in 0..b {
                        for oi in 0..o {
                            let gy = &gs[(bi * o + oi) * lo..(bi * o + oi + 1) * lo];
                            for ci in 0..c {
                                let row = (bi * c + ci) * l;
                                for j in 0..k {
                                    let wi = (oi * c + ci) * k + j;
                                    let (t0, t1) = tap_span(j, stride, pad, l, lo);
                                    if t0 >= t1 {
                                        continue;
                                    }
                                    if stride == 1 {
                                        let p0 = row + t0 + j - pad;
                                        let gy = &gy[t0..t1];
                                        if want_w {
                                            let src = &xs[p0..p0 + gy.len()];
                                            dw[wi] += dot(gy, src);
                                        }
                                        if want_x {
                                            let wj = ws[wi];
                                            for (d, &gt) in dx[p0..p0 + gy.len()].iter_mut().zip(gy) {
                                                *d += wj * gt;
                                            }
                                        }
                                    } else {
                                        for t in t0..t1 {
                                            let p = row + t * stride + j - pad;
                                            if want_w {
                                                dw[wi] += gy[t] * xs[p];
                                            }
                                            if want_x {
                                                dx[p] += ws[wi] * gy[t];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if want_x {
                        give(*x, ArrayD::from_shape_vec(IxDyn(&[b, c, l]), dx).expect("conv1d input grad"));
                    }
                    if want_w {
                        give(*w, ArrayD::from_shape_vec(IxDyn(&[o, c, k]), dw).expect("conv1d kernel grad"));
                    }
                }
                Op::Pool { x, window, stride, argmax } => {
                    let shape = val(*x).shape().to_vec();
                    let l = shape[2];
                    let lo = g.shape()[2];
                    let gs = standard(g);
                    let src = gs.as_slice().expect("contiguous");
                    let mut d = vec![T::zero(); shape.iter().product()];
                    match argmax {
                        Some(arg) => {
                            for (gi, &idx) in src.iter().zip(arg) {
                                d[idx] = d[idx] + *gi;
                            }
                        }
                        None => {
                            let inv = T::one() / T::of(*window as f64);
                            for row in 0..shape[0] * shape[1] {
                                for t in 0..lo {
                                    let gv = src[row * lo + t] * inv;
                                    for j in 0..*window {
                                        let idx = row * l + t * stride + j;
                                        d[idx] = d[idx] + gv;
                                    }
                                }
                            }
                        }
                    }
                    give(*x, ArrayD::from_shape_vec(IxDyn(&shape), d).expect("pool grad shape"))
                }
                Op::Bce { logits, targets } => {
                    let z = val(*logits);
                    let s = g.iter().next().copied().unwrap_or_else(T::one) / T::of(z.len().max(1) as f64);
                    let mut d = z.mapv(sigmoid);
                    d.zip_mut_with(targets, |p, &y| *p = (*p - y) * s);
                    give(*logits, d)
                }
                Op::Ce { logits, probs, labels } => {
                    let s = g.iter().next().copied().unwrap_or_else(T::one) / T::of(labels.len().max(1) as f64);
                    let mut d = probs.clone();
                    for (mut row, &y) in d.outer_iter_mut().zip(labels) {
                        row[y] = row[y] - T::one();
                        row.mapv_inplace(|v| v * s);
                    }
                    give(*logits, d)
                }
            }
        }

        let mut params: Vec<(ParamId, ArrayD<T>)> = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, &grads[i]) {
                match params.iter_mut().find(|(p, _)| *p == id) {
                    Some((_, acc)) => *acc += g,
                    None => params.push((id, g.clone())),
                }
            }
        }
        Ok(Gradients { vars: grads, params })
    }
}

/// Dot product with eight independent partial sums, so the loop
/// vectorises.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Output positions `t0..t1` whose tap `j` reads inside the unpadded
/// signal, i.e. `0 <= t * stride + j - pad < l`.
fn tap_span(j: usize, stride: usize, pad: usize, l: usize, lo: usize) -> (usize, usize) {
    let t0 = if j >= pad { 0 } else { (pad - j).div_ceil(stride) };
    let t1 = if l + pad > j { ((l + pad - j - 1) / stride + 1).min(lo) } else { 0 };
    (t0.min(t1), t1)
}

//! Sequencer, real-valued LSTM and the two-plane LSTM head.
//!
//! Gate layout in the stacked weight matrices is `[input, forget, cell,
//! output]`, each `H` rows.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::init::uniform;
use crate::params::{ParamId, ParamKind, ParamStore, Plane};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Number of whole steps of `step` samples in `len`; trailing samples are
/// dropped.
pub fn sequence_steps(len: usize, step: usize) -> Result<usize> {
    if step == 0 || step > len {
        return Err(Error::InvalidParameter(format!(
            "sequencer step {step} for signal length {len}"
        )));
    }
    Ok(len / step)
}

/// `[B, L]` to `[B, T, S]`: step `t` holds samples `[t S, (t + 1) S)`.
pub fn sequence<T: Real>(tape: &Tape<T>, x: Var, step: usize) -> Result<Var> {
    let shape = tape.shape(x);
    if shape.len() != 2 {
        return Err(Error::Shape(format!("sequencer expects [B, L], got {shape:?}")));
    }
    let steps = sequence_steps(shape[1], step)?;
    let trimmed = if steps * step == shape[1] {
        x
    } else {
        tape.slice(x, 1, 0, steps * step)?
    };
    tape.reshape(trimmed, &[shape[0], steps, step])
}

/// `[B, T, S]` back to `[B, T S]`.
pub fn flatten_steps<T: Real>(tape: &Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x);
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected [B, T, S], got {s:?}")));
    }
    tape.reshape(x, &[s[0], s[1] * s[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let g = 4 * hidden;
        Self {
            w_ih: store.add(format!("{name}.w_ih"), uniform(&[g, input], k, rng), ParamKind::Weight, Plane::Real),
            w_hh: store.add(format!("{name}.w_hh"), uniform(&[g, hidden], k, rng), ParamKind::Weight, Plane::Real),
            b_ih: store.add(format!("{name}.b_ih"), uniform(&[g], k, rng), ParamKind::Bias, Plane::Real),
            b_hh: store.add(format!("{name}.b_hh"), uniform(&[g], k, rng), ParamKind::Bias, Plane::Real),
            input,
            hidden,
        }
    }

    pub fn shapes(name: &str, input: usize, hidden: usize) -> Vec<(String, Vec<usize>, ParamKind)> {
        let g = 4 * hidden;
        vec![
            (format!("{name}.w_ih"), vec![g, input], ParamKind::Weight),
            (format!("{name}.w_hh"), vec![g, hidden], ParamKind::Weight),
            (format!("{name}.b_ih"), vec![g], ParamKind::Bias),
            (format!("{name}.b_hh"), vec![g], ParamKind::Bias),
        ]
    }
}

pub struct LstmOutput {
    /// Hidden state after each step, `[B, H]`.
    pub outputs: Vec<Var>,
    pub h: Var,
    pub c: Var,
}

/// Runs one LSTM over `x: [B, T, S]` from `(h0, c0)`, each `[B, H]`.
/// With `reverse`, steps are consumed from `T - 1` down to 0 and `outputs`
/// stays in time order.
pub fn lstm_forward<T: Real>(
    tape: &Tape<T>,
    store: &ParamStore<T>,
    p: &Lstm,
    x: Var,
    h0: Var,
    c0: Var,
    reverse: bool,
) -> Result<LstmOutput> {
    let xs = tape.shape(x);
    if xs.len() != 3 || xs[2] != p.input {
        return Err(shape_err("lstm input [B, T, S] vs input size", &xs, &[p.input]));
    }
    let (b, steps, h) = (xs[0], xs[1], p.hidden);
    for v in [h0, c0] {
        let s = tape.shape(v);
        if s != [b, h] {
            return Err(shape_err("lstm state", &s, &[b, h]));
        }
    }
    let flat = tape.reshape(x, &[b * steps, p.input])?;
    let proj = tape.matmul_nt(flat, tape.param(store, p.w_ih))?;
    let bias = tape.add(tape.param(store, p.b_ih), tape.param(store, p.b_hh))?;
    let proj = tape.reshape(tape.add(proj, bias)?, &[b, steps, 4 * h])?;
    let w_hh = tape.param(store, p.w_hh);

    let (mut hv, mut cv) = (h0, c0);
    let mut outputs = vec![h0; steps];
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let xt = tape.reshape(tape.slice(proj, 1, t, 1)?, &[b, 4 * h])?;
        let gates = tape.add(xt, tape.matmul_nt(hv, w_hh)?)?;
        let i = tape.sigmoid(tape.slice(gates, 1, 0, h)?);
        let f = tape.sigmoid(tape.slice(gates, 1, h, h)?);
        let g = tape.tanh(tape.slice(gates, 1, 2 * h, h)?);
        let o = tape.sigmoid(tape.slice(gates, 1, 3 * h, h)?);
        cv = tape.add(tape.mul(f, cv)?, tape.mul(i, g)?)?;
        hv = tape.mul(o, tape.tanh(cv))?;
        outputs[t] = hv;
    }
    Ok(LstmOutput { outputs, h: hv, c: cv })
}

/// Hidden and cell values per (layer, direction), carried between
/// minibatches as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentContext<T> {
    pub states: Vec<(ArrayD<T>, ArrayD<T>)>,
}

impl<T: Real> RecurrentContext<T> {
    pub fn zeros(cells: usize, batch: usize, hidden: usize) -> Self {
        let z = ArrayD::zeros(IxDyn(&[batch, hidden]));
        Self {
            states: vec![(z.clone(), z); cells],
        }
    }

    pub fn batch(&self) -> usize {
        self.states.first().map_or(0, |(h, _)| h.shape()[0])
    }

    pub fn is_zero(&self) -> bool {
        self.states
            .iter()
            .all(|(h, c)| h.iter().chain(c.iter()).all(|v| *v == T::zero()))
    }

    /// Matches a new batch size: extra rows dropped, missing rows zero.
    pub fn fit(&self, batch: usize) -> Self {
        let fit = |a: &ArrayD<T>| {
            let hidden = a.shape()[1];
            let mut out = ArrayD::zeros(IxDyn(&[batch, hidden]));
            let n = batch.min(a.shape()[0]);
            for r in 0..n {
                for k in 0..hidden {
                    out[[r, k]] = a[[r, k]];
                }
            }
            out
        };
        Self {
            states: self.states.iter().map(|(h, c)| (fit(h), fit(c))).collect(),
        }
    }
}

/// `layers` stacked LSTMs, optionally bidirectional. Cells are stored
/// layer-major: `[l0 fwd, l0 bwd, l1 fwd, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub cells: Vec<Lstm>,
    pub layers: usize,
    pub bidirectional: bool,
    pub hidden: usize,
}

impl LstmStack {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        bidirectional: bool,
        rng: &mut R,
    ) -> Self {
        let dirs = if bidirectional { 2 } else { 1 };
        let mut cells = Vec::new();
        for l in 0..layers {
            let inp = if l == 0 { input } else { hidden * dirs };
            for d in 0..dirs {
                let suffix = if d == 1 { "_reverse" } else { "" };
                cells.push(Lstm::new(store, &format!("{name}.l{l}{suffix}"), inp, hidden, rng));
            }
        }
        Self {
            cells,
            layers,
            bidirectional,
            hidden,
        }
    }

    pub fn shapes(name: &str, input: usize, hidden: usize, layers: usize, bidirectional: bool) -> Vec<(String, Vec<usize>, ParamKind)> {
        let dirs = if bidirectional { 2 } else { 1 };
        let mut v = Vec::new();
        for l in 0..layers {
            let inp = if l == 0 { input } else { hidden * dirs };
            for d in 0..dirs {
                let suffix = if d == 1 { "_reverse" } else { "" };
                v.extend(Lstm::shapes(&format!("{name}.l{l}{suffix}"), inp, hidden));
            }
        }
        v
    }

    pub fn dirs(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn feature_len(&self) -> usize {
        self.hidden * self.dirs()
    }

    pub fn zero_context<T: Real>(&self, batch: usize) -> RecurrentContext<T> {
        RecurrentContext::zeros(self.cells.len(), batch, self.hidden)
    }

    /// Final-step features `[B, H * dirs]` and the new context values.
    pub fn forward<T: Real>(
        &self,
        tape: &Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        ctx: &RecurrentContext<T>,
    ) -> Result<(Var, RecurrentContext<T>)> {
        let b = tape.shape(x)[0];
        if ctx.states.len() != self.cells.len() || ctx.batch() != b {
            return Err(Error::Shape(format!(
                "context holds {} states for batch {}, need {} for batch {b}",
                ctx.states.len(),
                ctx.batch(),
                self.cells.len()
            )));
        }
        let dirs = self.dirs();
        let mut input = x;
        let mut finals = Vec::new();
        let mut next = Vec::with_capacity(self.cells.len());
        for l in 0..self.layers {
            let mut outs = Vec::new();
            finals.clear();
            for d in 0..dirs {
                let idx = l * dirs + d;
                let (h0, c0) = &ctx.states[idx];
                let r = lstm_forward(
                    tape,
                    store,
                    &self.cells[idx],
                    input,
                    tape.constant(h0.clone()),
                    tape.constant(c0.clone()),
                    d == 1,
                )?;
                next.push((tape.value(r.h).clone(), tape.value(r.c).clone()));
                finals.push(r.h);
                outs.push(r.outputs);
            }
            if l + 1 < self.layers {
                let steps = outs[0].len();
                let mut per_step = Vec::with_capacity(steps);
                for t in 0..steps {
                    let parts: Vec<Var> = outs.iter().map(|o| o[t]).collect();
                    let joined = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 1)? };
                    per_step.push(tape.reshape(joined, &[b, 1, self.hidden * dirs])?);
                }
                input = tape.concat(&per_step, 1)?;
            }
        }
        let feature = if finals.len() == 1 { finals[0] } else { tape.concat(&finals, 1)? };
        Ok((feature, RecurrentContext { states: next }))
    }
}

/// Runs one stack per plane and concatenates the final features:
/// `[h_A ‖ h_B]`.
#[allow(clippy::too_many_arguments)]
pub fn dual_lstm_head<T: Real>(
    tape: &Tape<T>,
    store: &ParamStore<T>,
    xa: Var,
    xb: Var,
    pa: &LstmStack,
    pb: &LstmStack,
    ctx_a: &RecurrentContext<T>,
    ctx_b: &RecurrentContext<T>,
) -> Result<(Var, RecurrentContext<T>, RecurrentContext<T>)> {
    let (sa, sb) = (tape.shape(xa), tape.shape(xb));
    if sa != sb {
        return Err(shape_err("dual head plane sequences", &sa, &sb));
    }
    let (fa, na) = pa.forward(tape, store, xa, ctx_a)?;
    let (fb, nb) = pb.forward(tape, store, xb, ctx_b)?;
    Ok((tape.concat(&[fa, fb], 1)?, na, nb))
}

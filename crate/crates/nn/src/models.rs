//! The four architectures and their declarative spec.
//!
//! * CDCN: cBN, complex conv, cBN, activation, avg-pool, complex dense,
//!   activation, channel combiner, real linear.
//! * RDCN: cBN, complex mixer, Sequencer, one LSTM stack per plane,
//!   concatenated final states, real linear.
//! * ANN: flattened planes through real dense layers with ReLU.
//! * CNN: planes as two real channels, conv, ReLU, max-pool, dense, linear.
//!
//! Parameter counts come from [`ModelSpec::param_shapes`], which never
//! allocates; [`build_model`] produces exactly those shapes.

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::{complex_pool1d, crelu, zrelu, BufferUpdate, CTensor, ComplexBatchNorm, ComplexConv1d, ComplexLinear};
use crate::error::{shape_err, Error, Result};
use crate::init::{uniform, InitCriterion};
use crate::layers::{Conv1d, Linear};
use crate::params::{ParamId, ParamKind, ParamStore, Plane};
use crate::real::Real;
use crate::recurrent::{dual_lstm_head, sequence, sequence_steps, LstmStack, RecurrentContext};
use crate::tape::{conv_out_len, pool_out_len, PoolKind, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Cdcn,
    Rdcn,
    Ann,
    Cnn,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Cdcn, Arch::Rdcn, Arch::Ann, Arch::Cnn];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    ChannelAOnly,
    #[default]
    LearnedSum,
    ConvJoin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Crelu,
    Zrelu,
}

/// How RDCN's complex linear layer binds I/Q before the Sequencer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixer {
    /// One `L x L` complex matrix over the whole window.
    #[default]
    FullWindow,
    /// One `S x S` complex matrix shared by every step.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdcnSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub conv_channels: usize,
    pub pool: usize,
    pub dense: usize,
}

impl Default for CdcnSpec {
    fn default() -> Self {
        Self {
            kernel: 32,
            stride: 1,
            padding: 1,
            conv_channels: 16,
            pool: 8,
            dense: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdcnSpec {
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
    pub sequencer_step: usize,
    pub mixer: Mixer,
}

impl Default for RdcnSpec {
    fn default() -> Self {
        Self {
            hidden: 1024,
            layers: 1,
            bidirectional: false,
            sequencer_step: 100,
            mixer: Mixer::FullWindow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnSpec {
    pub hidden: Vec<usize>,
}

impl Default for AnnSpec {
    fn default() -> Self {
        Self { hidden: vec![2048, 512] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: usize,
    pub dense: usize,
}

impl Default for CnnSpec {
    fn default() -> Self {
        Self {
            channels: 32,
            kernel: 32,
            stride: 1,
            padding: 1,
            pool: 8,
            dense: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub arch: Arch,
    pub class_count: usize,
    pub input_len: usize,
    pub combiner: Combiner,
    pub activation: Activation,
    pub init: InitCriterion,
    pub cdcn: CdcnSpec,
    pub rdcn: RdcnSpec,
    pub ann: AnnSpec,
    pub cnn: CnnSpec,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            arch: Arch::Rdcn,
            class_count: 10,
            input_len: rfdcn_core::signal::DEFAULT_WINDOW_LEN,
            combiner: Combiner::default(),
            activation: Activation::default(),
            init: InitCriterion::default(),
            cdcn: CdcnSpec::default(),
            rdcn: RdcnSpec::default(),
            ann: AnnSpec::default(),
            cnn: CnnSpec::default(),
        }
    }
}

pub type ShapeList = Vec<(String, Vec<usize>, ParamKind)>;

impl ModelSpec {
    pub fn new(arch: Arch, class_count: usize, input_len: usize) -> Self {
        Self {
            arch,
            class_count,
            input_len,
            ..Self::default()
        }
    }

    /// Flattened width entering the CDCN dense layer.
    fn cdcn_flat(&self) -> Result<usize> {
        let c = &self.cdcn;
        if c.conv_channels == 0 || c.dense == 0 || c.pool == 0 {
            return Err(Error::InvalidSpec("cdcn sizes must be positive".into()));
        }
        if self.input_len < c.kernel {
            return Err(Error::InvalidSpec(format!(
                "input_len {} shorter than kernel {}",
                self.input_len, c.kernel
            )));
        }
        let conv_len = conv_out_len(self.input_len, c.kernel, c.stride, c.padding).map_err(spec_err)?;
        let pooled = pool_out_len(conv_len, c.pool, c.pool).map_err(spec_err)?;
        Ok(c.conv_channels * pooled)
    }

    fn rdcn_steps(&self) -> Result<usize> {
        let r = &self.rdcn;
        if r.hidden == 0 || r.layers == 0 {
            return Err(Error::InvalidSpec("rdcn hidden and layers must be positive".into()));
        }
        sequence_steps(self.input_len, r.sequencer_step).map_err(spec_err)
    }

    fn cnn_flat(&self) -> Result<usize> {
        let c = &self.cnn;
        if c.channels == 0 || c.dense == 0 {
            return Err(Error::InvalidSpec("cnn sizes must be positive".into()));
        }
        if self.input_len < c.kernel {
            return Err(Error::InvalidSpec(format!(
                "input_len {} shorter than kernel {}",
                self.input_len, c.kernel
            )));
        }
        let conv_len = conv_out_len(self.input_len, c.kernel, c.stride, c.padding).map_err(spec_err)?;
        Ok(c.channels * pool_out_len(conv_len, c.pool, c.pool).map_err(spec_err)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::InvalidSpec(format!("class_count {} < 2", self.class_count)));
        }
        if self.input_len == 0 {
            return Err(Error::InvalidSpec("input_len must be positive".into()));
        }
        match self.arch {
            Arch::Cdcn => self.cdcn_flat().map(|_| ()),
            Arch::Rdcn => self.rdcn_steps().map(|_| ()),
            Arch::Ann => {
                if self.ann.hidden.iter().any(|&h| h == 0) {
                    return Err(Error::InvalidSpec("ann hidden sizes must be positive".into()));
                }
                Ok(())
            }
            Arch::Cnn => self.cnn_flat().map(|_| ()),
        }
    }

    /// Every tensor [`build_model`] would allocate, in build order.
    pub fn param_shapes(&self) -> Result<ShapeList> {
        self.validate()?;
        let c = self.class_count;
        let mut v = ShapeList::new();
        match self.arch {
            Arch::Cdcn => {
                let s = &self.cdcn;
                let flat = self.cdcn_flat()?;
                v.extend(ComplexBatchNorm::shapes("bn_in", 1));
                v.extend(ComplexConv1d::shapes("conv", 1, s.conv_channels, s.kernel));
                v.extend(ComplexBatchNorm::shapes("bn_conv", s.conv_channels));
                v.extend(ComplexLinear::shapes("dense", flat, s.dense));
                v.extend(combiner_shapes(self.combiner));
                v.extend(Linear::shapes("out", s.dense, c));
            }
            Arch::Rdcn => {
                let r = &self.rdcn;
                let steps = self.rdcn_steps()?;
                let s = r.sequencer_step;
                v.extend(ComplexBatchNorm::shapes("bn_in", 1));
                match r.mixer {
                    Mixer::FullWindow => v.extend(ComplexLinear::shapes("mixer", self.input_len, steps * s)),
                    Mixer::PerStep => v.extend(ComplexLinear::shapes("mixer", s, s)),
                }
                v.extend(LstmStack::shapes("lstm_a", s, r.hidden, r.layers, r.bidirectional));
                v.extend(LstmStack::shapes("lstm_b", s, r.hidden, r.layers, r.bidirectional));
                let dirs = if r.bidirectional { 2 } else { 1 };
                v.extend(Linear::shapes("out", 2 * r.hidden * dirs, c));
            }
            Arch::Ann => {
                let mut prev = 2 * self.input_len;
                for (i, &h) in self.ann.hidden.iter().enumerate() {
                    v.extend(Linear::shapes(&format!("fc{i}"), prev, h));
                    prev = h;
                }
                v.extend(Linear::shapes("out", prev, c));
            }
            Arch::Cnn => {
                let s = &self.cnn;
                v.extend(Conv1d::shapes("conv", 2, s.channels, s.kernel));
                v.extend(Linear::shapes("dense", self.cnn_flat()?, s.dense));
                v.extend(Linear::shapes("out", s.dense, c));
            }
        }
        Ok(v)
    }

    /// Trainable scalar count (BN running statistics excluded).
    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .filter(|(_, _, k)| *k != ParamKind::Buffer)
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum())
    }
}

fn spec_err(e: Error) -> Error {
    Error::InvalidSpec(e.to_string())
}

fn combiner_shapes(c: Combiner) -> ShapeList {
    match c {
        Combiner::ChannelAOnly => vec![],
        Combiner::LearnedSum => vec![
            ("combine.g_a".into(), vec![1], ParamKind::Bias),
            ("combine.g_b".into(), vec![1], ParamKind::Bias),
        ],
        Combiner::ConvJoin => vec![
            ("combine.weight".into(), vec![2], ParamKind::Weight),
            ("combine.bias".into(), vec![1], ParamKind::Bias),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombinerParams {
    ChannelAOnly,
    LearnedSum { g_a: ParamId, g_b: ParamId },
    ConvJoin { w: ParamId, b: ParamId },
}

impl CombinerParams {
    fn new<T: Real, R: rand::Rng + ?Sized>(store: &mut ParamStore<T>, mode: Combiner, rng: &mut R) -> Self {
        let one = || ArrayD::from_elem(IxDyn(&[1]), T::one());
        match mode {
            Combiner::ChannelAOnly => Self::ChannelAOnly,
            Combiner::LearnedSum => Self::LearnedSum {
                g_a: store.add("combine.g_a", one(), ParamKind::Bias, Plane::A),
                g_b: store.add("combine.g_b", one(), ParamKind::Bias, Plane::B),
            },
            Combiner::ConvJoin => Self::ConvJoin {
                w: store.add(
                    "combine.weight",
                    uniform(&[2], std::f64::consts::FRAC_1_SQRT_2, rng),
                    ParamKind::Weight,
                    Plane::Real,
                ),
                b: store.add("combine.bias", ArrayD::zeros(IxDyn(&[1])), ParamKind::Bias, Plane::Real),
            },
        }
    }
}

/// Merges the two output planes into one real feature tensor.
/// `weights` is `None` for channel A only, `[G_a, G_b]` (each shape `[1]`)
/// for the learned sum, or `[w (shape [2]), bias (shape [1])]` for the 1x1
/// convolution join.
pub fn combine_channels<T: Real>(tape: &Tape<T>, out: CTensor, mode: Combiner, weights: Option<(Var, Var)>) -> Result<Var> {
    let (sa, sb) = (tape.shape(out.a), tape.shape(out.b));
    if sa != sb {
        return Err(shape_err("combiner planes", &sa, &sb));
    }
    match (mode, weights) {
        (Combiner::ChannelAOnly, _) => Ok(out.a),
        (Combiner::LearnedSum, Some((ga, gb))) => tape.add(tape.mul(ga, out.a)?, tape.mul(gb, out.b)?),
        (Combiner::ConvJoin, Some((w, b))) => {
            let w0 = tape.slice(w, 0, 0, 1)?;
            let w1 = tape.slice(w, 0, 1, 1)?;
            let y = tape.add(tape.mul(w0, out.a)?, tape.mul(w1, out.b)?)?;
            tape.add(y, b)
        }
        (m, None) => Err(Error::InvalidParameter(format!("combiner {m:?} needs weights"))),
    }
}

/// State threaded through one forward pass.
pub struct Pass<T> {
    pub training: bool,
    pub updates: Vec<BufferUpdate<T>>,
    /// Incoming recurrent context; replaced by the outgoing one. `None`
    /// means a fresh zero context.
    pub context: Option<Vec<RecurrentContext<T>>>,
}

impl<T: Real> Pass<T> {
    pub fn train() -> Self {
        Self {
            training: true,
            updates: Vec::new(),
            context: None,
        }
    }

    pub fn eval() -> Self {
        Self {
            training: false,
            updates: Vec::new(),
            context: None,
        }
    }
}

/// Anything the trainer can fit: planes `[B, L]` in, logits `[B, C]` out.
pub trait Network<T: Real> {
    fn class_count(&self) -> usize;
    fn input_len(&self) -> usize;
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;
    fn forward(&self, tape: &Tape<T>, input: CTensor, pass: &mut Pass<T>) -> Result<Var>;
    fn is_recurrent(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layers {
    Cdcn {
        bn_in: ComplexBatchNorm,
        conv: ComplexConv1d,
        bn_conv: ComplexBatchNorm,
        dense: ComplexLinear,
        combine: CombinerParams,
        out: Linear,
    },
    Rdcn {
        bn_in: ComplexBatchNorm,
        mixer: ComplexLinear,
        lstm_a: LstmStack,
        lstm_b: LstmStack,
        out: Linear,
    },
    Ann {
        hidden: Vec<Linear>,
        out: Linear,
    },
    Cnn {
        conv: Conv1d,
        dense: Linear,
        out: Linear,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub store: ParamStore<T>,
    layers: Layers,
}

/// Allocates and initializes a model from `seed`.
pub fn build_model<T: Real>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let c = spec.class_count;
    let init = spec.init;
    let layers = match spec.arch {
        Arch::Cdcn => {
            let s = &spec.cdcn;
            let flat = spec.cdcn_flat()?;
            let bn_in = ComplexBatchNorm::new(&mut store, "bn_in", 1);
            let conv = ComplexConv1d::new(&mut store, "conv", 1, s.conv_channels, s.kernel, s.stride, s.padding, init, &mut rng)?;
            let bn_conv = ComplexBatchNorm::new(&mut store, "bn_conv", s.conv_channels);
            let dense = ComplexLinear::new(&mut store, "dense", flat, s.dense, init, &mut rng);
            let combine = CombinerParams::new(&mut store, spec.combiner, &mut rng);
            let out = Linear::new(&mut store, "out", s.dense, c, &mut rng);
            Layers::Cdcn {
                bn_in,
                conv,
                bn_conv,
                dense,
                combine,
                out,
            }
        }
        Arch::Rdcn => {
            let r = &spec.rdcn;
            let steps = spec.rdcn_steps()?;
            let s = r.sequencer_step;
            let bn_in = ComplexBatchNorm::new(&mut store, "bn_in", 1);
            let mixer = match r.mixer {
                Mixer::FullWindow => ComplexLinear::new(&mut store, "mixer", spec.input_len, steps * s, init, &mut rng),
                Mixer::PerStep => ComplexLinear::new(&mut store, "mixer", s, s, init, &mut rng),
            };
            let lstm_a = LstmStack::new(&mut store, "lstm_a", s, r.hidden, r.layers, r.bidirectional, &mut rng);
            let lstm_b = LstmStack::new(&mut store, "lstm_b", s, r.hidden, r.layers, r.bidirectional, &mut rng);
            let out = Linear::new(&mut store, "out", 2 * lstm_a.feature_len(), c, &mut rng);
            Layers::Rdcn {
                bn_in,
                mixer,
                lstm_a,
                lstm_b,
                out,
            }
        }
        Arch::Ann => {
            let mut prev = 2 * spec.input_len;
            let mut hidden = Vec::new();
            for (i, &h) in spec.ann.hidden.iter().enumerate() {
                hidden.push(Linear::new(&mut store, &format!("fc{i}"), prev, h, &mut rng));
                prev = h;
            }
            let out = Linear::new(&mut store, "out", prev, c, &mut rng);
            Layers::Ann { hidden, out }
        }
        Arch::Cnn => {
            let s = &spec.cnn;
            let conv = Conv1d::new(&mut store, "conv", 2, s.channels, s.kernel, s.stride, s.padding, &mut rng);
            let dense = Linear::new(&mut store, "dense", spec.cnn_flat()?, s.dense, &mut rng);
            let out = Linear::new(&mut store, "out", s.dense, c, &mut rng);
            Layers::Cnn { conv, dense, out }
        }
    };
    Ok(Model {
        spec: spec.clone(),
        store,
        layers,
    })
}

impl<T: Real> Model<T> {
    fn activate(&self, tape: &Tape<T>, z: CTensor) -> Result<CTensor> {
        match self.spec.activation {
            Activation::Crelu => Ok(crelu(tape, z)),
            Activation::Zrelu => zrelu(tape, z),
        }
    }

    /// Learned-sum gains `(G_a, G_b)`, when that combiner is in use.
    pub fn combiner_gains(&self) -> Option<(f64, f64)> {
        match &self.layers {
            Layers::Cdcn {
                combine: CombinerParams::LearnedSum { g_a, g_b },
                ..
            } => Some((self.store.value(*g_a)[[0]].f64(), self.store.value(*g_b)[[0]].f64())),
            _ => None,
        }
    }

    pub fn zero_context(&self, batch: usize) -> Option<Vec<RecurrentContext<T>>> {
        match &self.layers {
            Layers::Rdcn { lstm_a, lstm_b, .. } => Some(vec![lstm_a.zero_context(batch), lstm_b.zero_context(batch)]),
            _ => None,
        }
    }
}

impl<T: Real> Network<T> for Model<T> {
    fn class_count(&self) -> usize {
        self.spec.class_count
    }

    fn input_len(&self) -> usize {
        self.spec.input_len
    }

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn is_recurrent(&self) -> bool {
        matches!(self.layers, Layers::Rdcn { .. })
    }

    fn forward(&self, tape: &Tape<T>, input: CTensor, pass: &mut Pass<T>) -> Result<Var> {
        let shape = input.shape(tape);
        if shape.len() != 2 || shape[1] != self.spec.input_len {
            return Err(shape_err("model input [B, L]", &shape, &[0, self.spec.input_len]));
        }
        let b = shape[0];
        let l = shape[1];
        let st = &self.store;
        match &self.layers {
            Layers::Cdcn {
                bn_in,
                conv,
                bn_conv,
                dense,
                combine,
                out,
            } => {
                let x = input.map::<T>(|p| tape.reshape(p, &[b, 1, l]))?;
                let x = bn_in.forward(tape, st, x, pass.training, &mut pass.updates)?;
                let x = conv.forward(tape, st, x)?;
                let x = bn_conv.forward(tape, st, x, pass.training, &mut pass.updates)?;
                let x = self.activate(tape, x)?;
                let pool = self.spec.cdcn.pool;
                let x = complex_pool1d(tape, x, PoolKind::Avg, pool, pool)?;
                let flat = tape.shape(x.a)[1..].iter().product::<usize>();
                let x = x.map::<T>(|p| tape.reshape(p, &[b, flat]))?;
                let x = dense.forward(tape, st, x)?;
                let x = self.activate(tape, x)?;
                let weights = match combine {
                    CombinerParams::ChannelAOnly => None,
                    CombinerParams::LearnedSum { g_a, g_b } => Some((tape.param(st, *g_a), tape.param(st, *g_b))),
                    CombinerParams::ConvJoin { w, b } => Some((tape.param(st, *w), tape.param(st, *b))),
                };
                let f = combine_channels(tape, x, self.spec.combiner, weights)?;
                out.forward(tape, st, f)
            }
            Layers::Rdcn {
                bn_in,
                mixer,
                lstm_a,
                lstm_b,
                out,
            } => {
                let s = self.spec.rdcn.sequencer_step;
                let steps = l / s;
                let x = input.map::<T>(|p| tape.reshape(p, &[b, 1, l]))?;
                let x = bn_in.forward(tape, st, x, pass.training, &mut pass.updates)?;
                let x = x.map::<T>(|p| tape.reshape(p, &[b, l]))?;
                let mixed = match self.spec.rdcn.mixer {
                    Mixer::FullWindow => mixer.forward(tape, st, x)?,
                    Mixer::PerStep => {
                        let rows = x.map::<T>(|p| {
                            let q = sequence(tape, p, s)?;
                            tape.reshape(q, &[b * steps, s])
                        })?;
                        let y = mixer.forward(tape, st, rows)?;
                        y.map::<T>(|p| tape.reshape(p, &[b, steps * s]))?
                    }
                };
                let qa = sequence(tape, mixed.a, s)?;
                let qb = sequence(tape, mixed.b, s)?;
                let ctx = match pass.context.take() {
                    Some(c) if c.len() == 2 => c,
                    _ => self.zero_context(b).expect("rdcn context"),
                };
                let (ca, cb) = (ctx[0].fit(b), ctx[1].fit(b));
                let (f, na, nb) = dual_lstm_head(tape, st, qa, qb, lstm_a, lstm_b, &ca, &cb)?;
                pass.context = Some(vec![na, nb]);
                out.forward(tape, st, f)
            }
            Layers::Ann { hidden, out } => {
                let mut x = tape.concat(&[input.a, input.b], 1)?;
                for layer in hidden {
                    x = tape.relu(layer.forward(tape, st, x)?);
                }
                out.forward(tape, st, x)
            }
            Layers::Cnn { conv, dense, out } => {
                let a = tape.reshape(input.a, &[b, 1, l])?;
                let bb = tape.reshape(input.b, &[b, 1, l])?;
                let x = tape.concat(&[a, bb], 1)?;
                let x = tape.relu(conv.forward(tape, st, x)?);
                let pool = self.spec.cnn.pool;
                let x = tape.pool1d(x, PoolKind::Max, pool, pool)?;
                let flat = tape.shape(x)[1..].iter().product::<usize>();
                let x = tape.reshape(x, &[b, flat])?;
                let x = tape.relu(dense.forward(tape, st, x)?);
                out.forward(tape, st, x)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small(arch: Arch) -> ModelSpec {
        let mut s = ModelSpec::new(arch, 3, 64);
        s.cdcn = CdcnSpec {
            kernel: 8,
            conv_channels: 2,
            pool: 4,
            dense: 5,
            ..CdcnSpec::default()
        };
        s.rdcn = RdcnSpec {
            hidden: 4,
            sequencer_step: 16,
            mixer: Mixer::PerStep,
            ..RdcnSpec::default()
        };
        s.ann.hidden = vec![6, 5];
        s.cnn = CnnSpec {
            channels: 2,
            kernel: 8,
            pool: 4,
            dense: 5,
            ..CnnSpec::default()
        };
        s
    }

    fn input(tape: &Tape<f64>, b: usize, l: usize) -> CTensor {
        let a = ArrayD::from_shape_fn(IxDyn(&[b, l]), |i| ((i[0] * 7 + i[1]) as f64 * 0.37).sin());
        let q = ArrayD::from_shape_fn(IxDyn(&[b, l]), |i| ((i[0] * 3 + i[1]) as f64 * 0.91).cos());
        CTensor::constant(tape, a, q).unwrap()
    }

    #[test]
    fn shapes_match_built_model() {
        for arch in Arch::ALL {
            for combiner in [Combiner::ChannelAOnly, Combiner::LearnedSum, Combiner::ConvJoin] {
                let mut spec = small(arch);
                spec.combiner = combiner;
                let m = build_model::<f64>(&spec, 0).unwrap();
                let built: Vec<_> = m.store.iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec(), p.kind)).collect();
                assert_eq!(built, spec.param_shapes().unwrap(), "{arch:?}");
                assert_eq!(m.store.trainable_count(), spec.param_count().unwrap());
            }
        }
    }

    #[test]
    fn forward_shapes_all_archs() {
        for arch in Arch::ALL {
            let m = build_model::<f64>(&small(arch), 1).unwrap();
            let t = Tape::new();
            let y = m.forward(&t, input(&t, 4, 64), &mut Pass::train()).unwrap();
            assert_eq!(t.shape(y), vec![4, 3], "{arch:?}");
            let t = Tape::new();
            let y = m.forward(&t, input(&t, 1, 64), &mut Pass::eval()).unwrap();
            assert_eq!(t.shape(y), vec![1, 3]);
        }
    }

    #[test]
    fn full_window_mixer_forward() {
        let mut spec = small(Arch::Rdcn);
        spec.rdcn.mixer = Mixer::FullWindow;
        spec.input_len = 70;
        let m = build_model::<f64>(&spec, 1).unwrap();
        let t = Tape::new();
        let y = m.forward(&t, input(&t, 2, 70), &mut Pass::train()).unwrap();
        assert_eq!(t.shape(y), vec![2, 3]);
    }

    #[test]
    fn same_seed_same_parameters() {
        for arch in Arch::ALL {
            let a = build_model::<f32>(&small(arch), 9).unwrap();
            let b = build_model::<f32>(&small(arch), 9).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn spec_errors_named() {
        let mut s = small(Arch::Cdcn);
        s.class_count = 1;
        assert!(s.validate().unwrap_err().to_string().contains("class_count"));
        let mut s = small(Arch::Cdcn);
        s.input_len = 4;
        assert!(s.validate().unwrap_err().to_string().contains("kernel"));
    }

    #[test]
    fn spec_json_round_trip_rejects_unknown_keys() {
        let s = small(Arch::Rdcn);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&j).unwrap(), s);
        assert!(serde_json::from_str::<ModelSpec>(r#"{"arch": "rdcn", "hiden": 3}"#).is_err());
    }

    fn ctensor(t: &Tape<f64>, a: &[f64], b: &[f64]) -> CTensor {
        let row = |v: &[f64]| ArrayD::from_shape_vec(IxDyn(&[1, v.len()]), v.to_vec()).unwrap();
        CTensor::constant(t, row(a), row(b)).unwrap()
    }

    #[test]
    fn combiner_examples() {
        let t = Tape::<f64>::new();
        let z = ctensor(&t, &[1.0, -2.0, 3.0], &[4.0, 5.0, -6.0]);
        let one = t.constant(array![1.0].into_dyn());
        let zero = t.constant(array![0.0].into_dyn());
        let a = combine_channels(&t, z, Combiner::LearnedSum, Some((one, zero))).unwrap();
        assert_eq!(*t.value(a), *t.value(z.a));
        let only_a = combine_channels(&t, z, Combiner::ChannelAOnly, None).unwrap();
        assert_eq!(*t.value(only_a), *t.value(z.a));

        let zb = ctensor(&t, &[1.0, -2.0, 3.0], &[0.0, 0.0, 0.0]);
        let g = t.constant(array![2.5].into_dyn());
        let s = combine_channels(&t, zb, Combiner::LearnedSum, Some((g, one))).unwrap();
        assert_eq!(t.value(s).iter().copied().collect::<Vec<_>>(), vec![2.5, -5.0, 7.5]);

        let w = t.constant(array![0.5, 0.5].into_dyn());
        let m = combine_channels(&t, z, Combiner::ConvJoin, Some((w, zero))).unwrap();
        assert_eq!(t.value(m).iter().copied().collect::<Vec<_>>(), vec![2.5, 1.5, -1.5]);
    }

    #[test]
    fn learned_sum_gain_gradient_is_projection_on_b() {
        let t = Tape::<f64>::new();
        let z = ctensor(&t, &[1.0, 2.0], &[3.0, -1.0]);
        let ga = t.var(array![1.0].into_dyn());
        let gb = t.var(array![1.0].into_dyn());
        let y = combine_channels(&t, z, Combiner::LearnedSum, Some((ga, gb))).unwrap();
        // downstream gradient (1, 3) is orthogonal to outB = (3, -1)
        let w = t.constant(array![[1.0, 3.0]].into_dyn());
        let loss = t.sum(t.mul(y, w).unwrap());
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(gb).unwrap()[[0]], 0.0);
        assert_eq!(g.wrt(ga).unwrap()[[0]], 7.0);
    }

    #[test]
    fn learned_sum_gains_start_at_one() {
        let m = build_model::<f32>(&small(Arch::Cdcn), 0).unwrap();
        assert_eq!(m.combiner_gains(), Some((1.0, 1.0)));
    }

    #[test]
    fn rdcn_context_is_returned() {
        let m = build_model::<f64>(&small(Arch::Rdcn), 1).unwrap();
        let t = Tape::new();
        let mut pass = Pass::train();
        m.forward(&t, input(&t, 3, 64), &mut pass).unwrap();
        let ctx = pass.context.unwrap();
        assert_eq!(ctx.len(), 2);
        assert!(!ctx[0].is_zero());
    }
}

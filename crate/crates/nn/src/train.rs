//! Minibatch training with plateau annealing, and evaluation.

use std::time::Instant;

use ndarray::{ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfdcn_core::dsp::crop::{crop_len, CropScheduler};
use rfdcn_core::{LabeledDataset, LabeledWindow, Split};
use serde::{Deserialize, Serialize};

use crate::complex::{apply_updates, CTensor};
use crate::error::{Error, Result};
use crate::models::{Network, Pass};
use crate::optim::{Optimizer, OptimizerKind};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Bce,
    Ce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealConfig {
    pub patience_epochs: usize,
    pub factor: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            patience_epochs: 10,
            factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr_init: f64,
    pub weight_decay: f64,
    pub anneal: AnnealConfig,
    pub early_stop_lr: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Fraction of train held out for validation when the dataset has no
    /// val split.
    pub val_fraction: f64,
    /// Train and validate on one random part out of N.
    pub crop_parts: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            lr_init: 1e-4,
            weight_decay: 9e-5,
            anneal: AnnealConfig::default(),
            early_stop_lr: 1e-7,
            loss: LossKind::Bce,
            seed: 0,
            val_fraction: 0.1,
            crop_parts: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.anneal.patience_epochs == 0 {
            return bad("anneal.patience_epochs must be at least 1".into());
        }
        if !(self.anneal.factor > 0.0 && self.anneal.factor < 1.0) {
            return bad(format!("anneal.factor {} outside (0, 1)", self.anneal.factor));
        }
        if !(self.lr_init > 0.0) || !(self.early_stop_lr >= 0.0) {
            return bad(format!("lr_init {} / early_stop_lr {}", self.lr_init, self.early_stop_lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {}", self.val_fraction));
        }
        if self.crop_parts == Some(0) {
            return bad("crop_parts must be at least 1".into());
        }
        Ok(())
    }
}

/// Plateau schedule. The score before any training is the first "best";
/// an epoch improves only if its score is strictly greater.
#[derive(Debug, Clone, PartialEq)]
pub struct Annealer {
    lr_init: f64,
    factor: f64,
    patience: usize,
    stop_below: f64,
    decays: i32,
    best: f64,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealStep {
    pub improved: bool,
    pub decayed: bool,
    pub stop: bool,
    pub lr: f64,
}

impl Annealer {
    pub fn new(cfg: &TrainConfig, baseline: f64) -> Self {
        Self {
            lr_init: cfg.lr_init,
            factor: cfg.anneal.factor,
            patience: cfg.anneal.patience_epochs,
            stop_below: cfg.early_stop_lr,
            decays: 0,
            best: baseline,
            stale: 0,
        }
    }

    /// `lr_init * factor^k`, computed directly so repeated decays do not
    /// accumulate rounding.
    pub fn lr(&self) -> f64 {
        self.lr_init * self.factor.powi(self.decays)
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stale_epochs(&self) -> usize {
        self.stale
    }

    fn should_stop(&self) -> bool {
        // relative slack so 1e-4 * 0.1^3 does not count as below 1e-7
        self.lr() < self.stop_below * (1.0 - 1e-9)
    }

    pub fn observe(&mut self, score: f64) -> AnnealStep {
        let improved = score > self.best;
        let mut decayed = false;
        if improved {
            self.best = score;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.decays += 1;
                self.stale = 0;
                decayed = true;
            }
        }
        AnnealStep {
            improved,
            decayed,
            stop: self.should_stop(),
            lr: self.lr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_val_top1: f64,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch beat the untrained model.
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub stopped_early: bool,
    pub final_lr: f64,
}

/// Windows used for training and validation, resolved from the dataset.
#[derive(Debug, Clone)]
pub struct SplitPlan<'a> {
    pub train: Vec<&'a LabeledWindow>,
    pub val: Vec<&'a LabeledWindow>,
}

/// Uses the dataset's val split if present, otherwise holds out
/// `fraction` of each class's train windows (at least one when the class
/// has two or more).
pub fn plan_splits(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<SplitPlan<'_>> {
    let train: Vec<&LabeledWindow> = ds.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::EmptySplit(Split::Train));
    }
    let val: Vec<&LabeledWindow> = ds.split(Split::Val).collect();
    if !val.is_empty() {
        return Ok(SplitPlan { train, val });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_da7e);
    let mut keep = Vec::new();
    let mut held = Vec::new();
    for c in 0..ds.class_count {
        let mut idx: Vec<&LabeledWindow> = train.iter().copied().filter(|w| w.label == c).collect();
        idx.shuffle(&mut rng);
        let n = if idx.len() >= 2 {
            ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        held.extend(idx.drain(..n));
        keep.extend(idx);
    }
    if held.is_empty() {
        return Err(Error::EmptySplit(Split::Val));
    }
    Ok(SplitPlan { train: keep, val: held })
}

/// Copies windows into `[B, len]` planes, optionally cutting each to one
/// random part. `keys` identify windows for the crop scheduler.
pub fn window_planes<T: Real>(
    windows: &[&LabeledWindow],
    keys: &[u64],
    crop: Option<&mut CropScheduler>,
) -> Result<(ArrayD<T>, ArrayD<T>)> {
    let full = windows.first().map_or(0, |w| w.signal.len());
    let (len, mut crop) = match crop {
        Some(s) if s.parts() > 1 => (crop_len(full, s.parts()), Some(s)),
        _ => (full, None),
    };
    let mut a = ArrayD::zeros(IxDyn(&[windows.len(), len]));
    let mut b = ArrayD::zeros(IxDyn(&[windows.len(), len]));
    for (r, (w, &key)) in windows.iter().zip(keys).enumerate() {
        let x = w.signal.samples();
        let start = match crop.as_deref_mut() {
            Some(s) => {
                if s.parts() > x.len() {
                    return Err(Error::InvalidParameter(format!("cannot cut {} samples into {} parts", x.len(), s.parts())));
                }
                s.draw(key) * len
            }
            None => 0,
        };
        for (k, z) in x[start..start + len].iter().enumerate() {
            a[[r, k]] = T::of(z.re);
            b[[r, k]] = T::of(z.im);
        }
    }
    Ok((a, b))
}

/// Mean loss over the batch.
pub fn loss<T: Real>(tape: &Tape<T>, logits: Var, labels: &[usize], kind: LossKind) -> Result<Var> {
    match kind {
        LossKind::Ce => tape.softmax_ce(logits, labels),
        LossKind::Bce => {
            let s = tape.shape(logits);
            if s.len() != 2 || s[0] != labels.len() {
                return Err(crate::error::shape_err("bce logits/labels", &s, &[labels.len()]));
            }
            let mut t = ArrayD::zeros(IxDyn(&s));
            for (r, &y) in labels.iter().enumerate() {
                if y >= s[1] {
                    return Err(Error::InvalidParameter(format!("label {y} out of range for {} classes", s[1])));
                }
                t[[r, y]] = T::one();
            }
            tape.bce_with_logits(logits, t)
        }
    }
}

/// Descending class order for one logit row; ties keep the lower index first.
pub fn rank_classes<T: Real>(row: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

/// Chunks `0..n` into batches of `size`, folding a trailing singleton into
/// the previous batch so batch statistics always see two rows.
fn batches(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

fn key_of(w: &LabeledWindow, fallback: usize) -> u64 {
    // stable per-window key from the source id so crops do not depend on
    // the order windows are visited
    match &w.signal.source_id {
        Some(id) => id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3)),
        None => fallback as u64,
    }
}

/// Logits for every window, batched, eval mode, fresh recurrent context.
pub fn predict<T: Real, N: Network<T> + ?Sized>(
    model: &N,
    windows: &[&LabeledWindow],
    crop: Option<&mut CropScheduler>,
    batch_size: usize,
) -> Result<Vec<Vec<T>>> {
    let keys: Vec<u64> = windows.iter().enumerate().map(|(i, w)| key_of(w, i)).collect();
    let (a, b) = window_planes::<T>(windows, &keys, crop)?;
    infer(model, &a, &b, batch_size)
}

fn infer<T: Real, N: Network<T> + ?Sized>(model: &N, a: &ArrayD<T>, b: &ArrayD<T>, batch_size: usize) -> Result<Vec<Vec<T>>> {
    let n = a.shape()[0];
    let mut out = Vec::with_capacity(n);
    for r in batches(n, batch_size.max(1)) {
        let tape = Tape::new();
        let sl = |p: &ArrayD<T>| p.slice_axis(ndarray::Axis(0), ndarray::Slice::from(r.clone())).to_owned();
        let x = CTensor::constant(&tape, sl(a), sl(b))?;
        let y = model.forward(&tape, x, &mut Pass::eval())?;
        let v = tape.value(y);
        out.extend(v.outer_iter().map(|row| row.iter().copied().collect::<Vec<T>>()));
    }
    Ok(out)
}

fn top1<T: Real>(logits: &[Vec<T>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits.iter().zip(labels).filter(|(l, &y)| rank_classes(l)[0] == y).count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub load_s: f64,
    pub preprocess_s: f64,
    pub infer_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub top1: f64,
    /// Accuracy within the best `top_k` classes.
    pub top5: f64,
    pub top_k: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub timings: PhaseTimings,
}

/// Scores one split. With `crop = Some((N, seed))` every window is cut into
/// N parts and one random part is classified.
pub fn evaluate<T: Real, N: Network<T> + ?Sized>(
    model: &N,
    ds: &LabeledDataset,
    split: Split,
    crop: Option<(usize, u64)>,
) -> Result<EvalReport> {
    let t0 = Instant::now();
    let windows: Vec<&LabeledWindow> = ds.split(split).collect();
    if windows.is_empty() {
        return Err(Error::EmptySplit(split));
    }
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let keys: Vec<u64> = windows.iter().enumerate().map(|(i, w)| key_of(w, i)).collect();
    let load_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut sched = match crop {
        Some((n, seed)) => Some(CropScheduler::new(n, seed)?),
        None => None,
    };
    let (a, b) = window_planes::<T>(&windows, &keys, sched.as_mut())?;
    let preprocess_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let logits = infer(model, &a, &b, 64)?;
    let infer_s = t2.elapsed().as_secs_f64();
    Ok(report(&logits, &labels, model.class_count(), PhaseTimings { load_s, preprocess_s, infer_s }))
}

/// Builds a report from precomputed logits.
pub fn report<T: Real>(logits: &[Vec<T>], labels: &[usize], classes: usize, timings: PhaseTimings) -> EvalReport {
    let k = classes.min(5);
    let mut confusion = vec![vec![0usize; classes]; classes];
    let (mut h1, mut hk) = (0usize, 0usize);
    for (row, &y) in logits.iter().zip(labels) {
        let rank = rank_classes(row);
        confusion[y][rank[0]] += 1;
        h1 += usize::from(rank[0] == y);
        hk += usize::from(rank[..k].contains(&y));
    }
    let n = labels.len();
    let frac = |h: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    EvalReport {
        n,
        top1: frac(h1),
        top5: frac(hk),
        top_k: k,
        confusion,
        timings,
    }
}

/// Trains in place and leaves the best-validation parameters in `model`.
pub fn train<T: Real, N: Network<T> + ?Sized>(model: &mut N, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    train_with(model, ds, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Real, N: Network<T> + ?Sized>(
    model: &mut N,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if ds.class_count != model.class_count() {
        return Err(Error::InvalidParameter(format!(
            "dataset has {} classes, model {}",
            ds.class_count,
            model.class_count()
        )));
    }
    let plan = plan_splits(ds, cfg.val_fraction, cfg.seed)?;
    let full = plan.train[0].signal.len();
    let parts = cfg.crop_parts.unwrap_or(1);
    let want = if parts > 1 { crop_len(full, parts) } else { full };
    if want != model.input_len() {
        return Err(Error::InvalidParameter(format!(
            "model expects {} samples, training windows give {want}",
            model.input_len()
        )));
    }

    let train_keys: Vec<u64> = plan.train.iter().enumerate().map(|(i, w)| key_of(w, i)).collect();
    let val_keys: Vec<u64> = plan.val.iter().enumerate().map(|(i, w)| key_of(w, i)).collect();
    let val_labels: Vec<usize> = plan.val.iter().map(|w| w.label).collect();
    // validation crops are fixed for the whole run
    let (val_a, val_b) = {
        let mut s = CropScheduler::new(parts, cfg.seed ^ 0x5eed_0a11)?;
        window_planes::<T>(&plan.val, &val_keys, Some(&mut s))?
    };
    let val_score = |m: &N| -> Result<f64> { Ok(top1(&infer(m, &val_a, &val_b, 64)?, &val_labels)) };

    let initial = val_score(model)?;
    let mut annealer = Annealer::new(cfg, initial);
    let mut best: ParamStore<T> = model.store().clone();
    let mut history = TrainHistory {
        initial_val_top1: initial,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_top1: initial,
        stopped_early: false,
        final_lr: annealer.lr(),
    };
    let mut opt = Optimizer::<T>::new(cfg.optimizer, cfg.weight_decay);
    let mut crop = CropScheduler::new(parts, cfg.seed ^ 0xc0ff_ee00)?;
    let mut order: Vec<usize> = (0..plan.train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let lr = annealer.lr();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        // context starts clean every epoch and carries values only
        let mut context = None;
        let (mut loss_sum, mut hits) = (0.0f64, 0usize);
        for (bi, r) in batches(order.len(), cfg.batch_size).into_iter().enumerate() {
            let idx = &order[r];
            let ws: Vec<&LabeledWindow> = idx.iter().map(|&i| plan.train[i]).collect();
            let keys: Vec<u64> = idx.iter().map(|&i| train_keys[i]).collect();
            let labels: Vec<usize> = ws.iter().map(|w| w.label).collect();
            let (a, b) = window_planes::<T>(&ws, &keys, Some(&mut crop))?;

            let tape = Tape::new();
            let x = CTensor::constant(&tape, a, b)?;
            let mut pass = Pass {
                training: true,
                updates: Vec::new(),
                context: context.take(),
            };
            let logits = model.forward(&tape, x, &mut pass)?;
            let l = loss(&tape, logits, &labels, cfg.loss)?;
            let lv = tape.value(l).iter().next().copied().unwrap_or_else(T::zero).f64();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("loss {lv} at epoch {epoch}, batch {bi}")));
            }
            {
                let lg = tape.value(logits);
                hits += lg
                    .outer_iter()
                    .zip(&labels)
                    .filter(|(row, &y)| rank_classes(&row.iter().copied().collect::<Vec<T>>())[0] == y)
                    .count();
            }
            loss_sum += lv * labels.len() as f64;
            let grads = tape.backward(l)?;
            opt.step(model.store_mut(), grads.params(), lr)?;
            apply_updates(model.store_mut(), pass.updates)?;
            context = pass.context;
        }

        let val = val_score(model)?;
        let step = annealer.observe(val);
        if step.improved {
            best = model.store().clone();
            history.best_epoch = epoch;
            history.best_val_top1 = val;
        }
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / plan.train.len() as f64,
            train_top1: hits as f64 / plan.train.len() as f64,
            val_top1: val,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        history.epochs.push(rec);
        history.final_lr = step.lr;
        if step.stop {
            history.stopped_early = true;
            break;
        }
    }
    model.store_mut().load_from(&best)?;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, Arch, ModelSpec};
    use crate::params::{ParamId, ParamKind, Plane};
    use ndarray::array;
    use num_complex::Complex64;
    use rfdcn_core::ComplexSignal;

    #[test]
    fn bce_symmetric_point() {
        let t = Tape::<f64>::new();
        let z = t.var(ArrayD::zeros(IxDyn(&[1, 2])));
        let l = loss(&t, z, &[0], LossKind::Bce).unwrap();
        assert!((t.value(l)[[]] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_logits_near_zero_loss() {
        for kind in [LossKind::Bce, LossKind::Ce] {
            let t = Tape::<f64>::new();
            let z = t.var(array![[20.0, -20.0, -20.0], [-20.0, -20.0, 20.0]].into_dyn());
            let l = loss(&t, z, &[0, 2], kind).unwrap();
            assert!(t.value(l)[[]] < 1e-8, "{kind:?}");
        }
    }

    #[test]
    fn losses_match_direct_sum() {
        let z = array![[0.3, -1.2, 2.0, 0.1], [-0.7, 0.4, 0.0, 1.5], [1.1, 1.0, -2.2, -0.3]];
        let y = [2usize, 0, 1];
        let t = Tape::<f64>::new();
        let bce = loss(&t, t.var(z.clone().into_dyn()), &y, LossKind::Bce).unwrap();
        let ce = loss(&t, t.var(z.clone().into_dyn()), &y, LossKind::Ce).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut b, mut c) = (0.0, 0.0);
        for (r, &yr) in y.iter().enumerate() {
            for k in 0..4 {
                let p = sig(z[[r, k]]);
                b -= if k == yr { p.ln() } else { (1.0 - p).ln() };
            }
            let s: f64 = (0..4).map(|k| z[[r, k]].exp()).sum();
            c -= (z[[r, yr]].exp() / s).ln();
        }
        assert!((t.value(bce)[[]] - b / 12.0).abs() < 1e-9);
        assert!((t.value(ce)[[]] - c / 3.0).abs() < 1e-9);
    }

    fn cfg_stuck() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn annealer_stuck_trajectory() {
        let mut a = Annealer::new(&cfg_stuck(), 0.5);
        let mut lrs = vec![a.lr()];
        let mut stop_at = None;
        for epoch in 1..=100 {
            let s = a.observe(0.5);
            lrs.push(s.lr);
            if s.stop {
                stop_at = Some(epoch);
                break;
            }
        }
        // lr in force during epoch 11 is the value after epoch 10
        assert!((lrs[10] - 1e-5).abs() < 1e-20);
        assert!((lrs[9] - 1e-4).abs() < 1e-20);
        assert_eq!(stop_at, Some(40));
        for w in lrs.windows(2) {
            assert!(w[1] <= w[0]);
            if w[1] < w[0] {
                assert!((w[1] / w[0] - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn improvement_resets_patience() {
        let mut a = Annealer::new(&cfg_stuck(), 0.1);
        for _ in 0..9 {
            a.observe(0.1);
        }
        assert!(a.observe(0.2).improved);
        assert_eq!(a.stale_epochs(), 0);
        for _ in 0..9 {
            assert!(!a.observe(0.2).decayed);
        }
        assert!(a.observe(0.2).decayed);
    }

    fn report_of(logits: Vec<Vec<f64>>, labels: &[usize], c: usize) -> EvalReport {
        report(&logits, labels, c, PhaseTimings::default())
    }

    #[test]
    fn oracle_logits_are_perfect() {
        let labels = [0, 1, 2, 1];
        let logits = labels.iter().map(|&y| (0..3).map(|k| if k == y { 1.0 } else { 0.0 }).collect()).collect();
        let r = report_of(logits, &labels, 3);
        assert_eq!((r.top1, r.top5), (1.0, 1.0));
    }

    #[test]
    fn chance_level_and_confusion_rows() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20_000;
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let logits = (0..n).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let r = report_of(logits, &labels, 4);
        assert!((r.top1 - 0.25).abs() < 0.02);
        assert_eq!(r.top5, 1.0);
        assert_eq!(r.top_k, 4);
        for row in &r.confusion {
            assert_eq!(row.iter().sum::<usize>(), n / 4);
        }
    }

    #[test]
    fn batches_never_leave_singletons() {
        assert_eq!(batches(65, 32), vec![0..32, 32..65]);
        assert_eq!(batches(64, 32), vec![0..32, 32..64]);
        assert_eq!(batches(1, 32), vec![0..1]);
    }

    /// Two devices separated by DC offset, with a little noise.
    pub(crate) fn dc_toy(len: usize, per_class: usize, seed: u64) -> LabeledDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ws = Vec::new();
        for label in 0..2 {
            let dc = if label == 0 { -0.5 } else { 0.5 };
            for i in 0..per_class {
                let s: Vec<Complex64> = (0..len)
                    .map(|k| Complex64::new(dc + 0.1 * rng.random_range(-1.0..1.0), (k as f64 * 0.3).sin()))
                    .collect();
                let split = if i < per_class * 3 / 4 { Split::Train } else { Split::Test };
                ws.push(LabeledWindow {
                    signal: ComplexSignal::new(s, 1e6).unwrap().with_source_id(format!("d{label}-{i}")),
                    label,
                    split,
                });
            }
        }
        LabeledDataset::new(ws, vec!["a".into(), "b".into()]).unwrap()
    }

    fn toy_spec(arch: Arch) -> ModelSpec {
        let mut s = ModelSpec::new(arch, 2, 64);
        s.cdcn.kernel = 8;
        s.cdcn.conv_channels = 2;
        s.cdcn.pool = 4;
        s.cdcn.dense = 8;
        s.rdcn.hidden = 8;
        s.rdcn.sequencer_step = 16;
        s.rdcn.mixer = crate::models::Mixer::PerStep;
        s.ann.hidden = vec![16, 8];
        s.cnn.channels = 2;
        s.cnn.kernel = 8;
        s.cnn.pool = 4;
        s.cnn.dense = 8;
        s
    }

    #[test]
    fn dc_offset_toy_learned_by_every_arch() {
        let ds = dc_toy(64, 40, 1);
        // threshold-on-mean oracle confirms the task is separable
        for w in &ds.windows {
            let m: f64 = w.signal.samples().iter().map(|z| z.re).sum::<f64>() / 64.0;
            assert_eq!(usize::from(m > 0.0), w.label);
        }
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            lr_init: 1e-2,
            ..TrainConfig::default()
        };
        for arch in Arch::ALL {
            let mut m = build_model::<f64>(&toy_spec(arch), 3).unwrap();
            let h = train(&mut m, &ds, &cfg).unwrap();
            let last = h.epochs.last().unwrap();
            assert_eq!(last.train_top1, 1.0, "{arch:?}: {h:?}");
            let r = evaluate(&m, &ds, Split::Test, None).unwrap();
            assert_eq!(r.top1, 1.0, "{arch:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = dc_toy(64, 12, 2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr_init: 1e-3,
            crop_parts: Some(2),
            ..TrainConfig::default()
        };
        for arch in [Arch::Cdcn, Arch::Rdcn] {
            let mut spec = toy_spec(arch);
            spec.input_len = 32;
            let run = || {
                let mut m = build_model::<f64>(&spec, 5).unwrap();
                let h = train(&mut m, &ds, &cfg).unwrap();
                (m.store, h.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>())
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn empty_train_split_is_named() {
        let mut ds = dc_toy(64, 4, 0);
        for w in &mut ds.windows {
            w.split = Split::Test;
        }
        let mut m = build_model::<f64>(&toy_spec(Arch::Ann), 0).unwrap();
        let e = train(&mut m, &ds, &TrainConfig::default()).unwrap_err();
        assert!(matches!(e, Error::EmptySplit(Split::Train)));
    }

    #[test]
    fn divergence_aborts() {
        let ds = dc_toy(64, 8, 0);
        let mut m = build_model::<f64>(&toy_spec(Arch::Ann), 0).unwrap();
        let id = ParamId(0);
        let mut w = m.store.value(id).clone();
        w[[0, 0]] = f64::NAN;
        m.store.set(id, w).unwrap();
        let e = train(&mut m, &ds, &TrainConfig::default()).unwrap_err();
        assert!(e.to_string().starts_with("divergence"), "{e}");
    }

    #[test]
    fn val_holdout_is_stratified() {
        let ds = dc_toy(16, 40, 0);
        let plan = plan_splits(&ds, 0.1, 0).unwrap();
        assert_eq!(plan.val.len(), 6);
        assert_eq!(plan.val.iter().filter(|w| w.label == 0).count(), 3);
        assert_eq!(plan.train.len() + plan.val.len(), 60);
    }

    struct Flat {
        store: ParamStore<f64>,
        bias: ParamId,
    }

    impl Network<f64> for Flat {
        fn class_count(&self) -> usize {
            2
        }
        fn input_len(&self) -> usize {
            64
        }
        fn store(&self) -> &ParamStore<f64> {
            &self.store
        }
        fn store_mut(&mut self) -> &mut ParamStore<f64> {
            &mut self.store
        }
        fn forward(&self, tape: &Tape<f64>, input: CTensor, _: &mut Pass<f64>) -> Result<Var> {
            let b = tape.shape(input.a)[0];
            let zero = tape.constant(ArrayD::zeros(IxDyn(&[b, 2])));
            tape.add(zero, tape.param(&self.store, self.bias))
        }
    }

    #[test]
    fn best_checkpoint_is_the_untrained_one_when_nothing_improves() {
        let ds = dc_toy(64, 8, 0);
        let mut store = ParamStore::new();
        let bias = store.add("bias", array![0.0, 0.0].into_dyn(), ParamKind::Bias, Plane::Real);
        let mut m = Flat { store, bias };
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            lr_init: 0.1,
            ..TrainConfig::default()
        };
        let h = train(&mut m, &ds, &cfg).unwrap();
        assert_eq!(h.best_epoch, 0);
        assert_eq!(m.store.value(bias), &array![0.0, 0.0].into_dyn());
    }
}

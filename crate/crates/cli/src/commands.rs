//! One function per CLI verb. Each returns what it wrote so tests can check
//! it without parsing stdout.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rfdcn_core::dsp::{CropScheduler, Preprocessor};
use rfdcn_core::sigmf::{data_path_for, read_capture, Datatype};
use rfdcn_core::signal::window_signal;
use rfdcn_core::store::{read_manifest, read_sigmf_dataset, read_window_store, write_sigmf_dataset, write_window_store};
use rfdcn_core::synth::generate;
use rfdcn_core::{LabeledDataset, LabeledWindow, Split};
use rfdcn_nn::checkpoint;
use rfdcn_nn::models::{build_model, Model, Network};
use rfdcn_nn::train::{evaluate, predict, rank_classes, train, EvalReport, TrainHistory};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const HISTORY_FILE: &str = "history.json";
pub const EVAL_FILE: &str = "eval.json";
pub const FINGERPRINT_FILE: &str = "fingerprint.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path, what: &str) -> Result<()> {
    ensure!(path.exists(), "{what} not found at {} (run the earlier step first)", path.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub dir: PathBuf,
    pub classes: usize,
    pub windows: usize,
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    let g = generate(&cfg.synth).context("generating synthetic dataset")?;
    let dir = cfg.paths.raw_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    write_sigmf_dataset(&g.dataset, &dir, Datatype::Cf32Le, Some(&g.devices))
        .with_context(|| format!("writing SigMF dataset to {}", dir.display()))?;
    Ok(GenerateSummary {
        dir,
        classes: g.dataset.class_count,
        windows: g.dataset.windows.len(),
    })
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PathBuf> {
    let raw = cfg.paths.raw_dir();
    require(&raw, "SigMF dataset")?;
    let ds = read_sigmf_dataset(&raw).with_context(|| format!("reading {}", raw.display()))?;
    let fs_hz = ds.sample_rate_hz().context("dataset is empty")?;
    let pre = Preprocessor::new(cfg.preprocess, fs_hz)?;
    let out = pre.apply_dataset(&ds)?;
    let dir = cfg.paths.windows_dir();
    write_window_store(&out, &dir).with_context(|| format!("writing window store to {}", dir.display()))?;
    Ok(dir)
}

fn load_windows(cfg: &RunConfig) -> Result<LabeledDataset> {
    let dir = cfg.paths.windows_dir();
    require(&dir, "window store")?;
    let ds = read_window_store(&dir).with_context(|| format!("reading {}", dir.display()))?;
    let len = ds.window_len().unwrap_or(0) / cfg.crop_parts();
    ensure!(
        len == cfg.model.input_len,
        "stored windows give {len} samples per model input, config says {}; rerun preprocess",
        cfg.model.input_len
    );
    Ok(ds)
}

fn load_model(cfg: &RunConfig) -> Result<Model<f32>> {
    let path = &cfg.paths.checkpoint;
    require(path, "checkpoint")?;
    let m = checkpoint::load::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
    if m.spec != cfg.model {
        bail!("checkpoint {} was trained with a different model section", path.display());
    }
    Ok(m)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainHistory> {
    let ds = load_windows(cfg)?;
    let mut model = build_model::<f32>(&cfg.model, cfg.train.seed)?;
    let history = train(&mut model, &ds, &cfg.train_config())?;
    checkpoint::save(&cfg.paths.checkpoint, &model)?;
    write_json(&cfg.paths.report.join(HISTORY_FILE), &history)?;
    Ok(history)
}

/// Evaluates the checkpoint on the test split. `load` covers reading the
/// store and checkpoint.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let t0 = Instant::now();
    let ds = load_windows(cfg)?;
    let model = load_model(cfg)?;
    let load_s = t0.elapsed().as_secs_f64();
    let crop = (cfg.crop_parts() > 1).then_some((cfg.crop_parts(), cfg.train.seed));
    let mut report = evaluate(&model, &ds, Split::Test, crop)?;
    report.timings.load_s += load_s;
    write_json(&cfg.paths.report.join(EVAL_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub label: usize,
    pub name: String,
    /// Softmax probability averaged over the capture's windows.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub capture: PathBuf,
    pub windows: usize,
    pub ranking: Vec<Ranked>,
    pub seconds: f64,
}

fn softmax(row: &[f32]) -> Vec<f64> {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Ranks every class for one capture. The capture goes through the same
/// preprocessing as the training data and is cut into model-sized windows.
pub fn cmd_fingerprint(cfg: &RunConfig, meta_path: &Path) -> Result<Fingerprint> {
    let t0 = Instant::now();
    let model = load_model(cfg)?;
    let data_path = data_path_for(meta_path);
    let (_, signals) = read_capture(meta_path, &data_path).with_context(|| format!("reading capture {}", meta_path.display()))?;
    let names = class_names(cfg);

    let window_len = cfg.preprocess.output_len(cfg.synth.window_len);
    let mut windows = Vec::new();
    for s in &signals {
        let pre = Preprocessor::new(cfg.preprocess, s.sample_rate_hz())?;
        for phase in pre.apply(s)? {
            for (i, w) in window_signal(&phase, window_len, window_len)?.into_iter().enumerate() {
                let id = format!("{}#{}", w.source_id.as_deref().unwrap_or("capture"), i);
                windows.push(LabeledWindow {
                    signal: w.with_source_id(id),
                    label: 0,
                    split: Split::Test,
                });
            }
        }
    }
    ensure!(!windows.is_empty(), "capture {} holds no complete window", meta_path.display());
    let refs: Vec<&LabeledWindow> = windows.iter().collect();
    let mut crop = match cfg.crop_parts() {
        1 => None,
        n => Some(CropScheduler::new(n, cfg.train.seed)?),
    };
    let logits = predict(&model, &refs, crop.as_mut(), 64)?;

    let c = model.class_count();
    let mut mean = vec![0.0f64; c];
    for row in &logits {
        for (m, p) in mean.iter_mut().zip(softmax(row)) {
            *m += p / logits.len() as f64;
        }
    }
    let order = rank_classes(&mean);
    let fp = Fingerprint {
        capture: meta_path.to_path_buf(),
        windows: windows.len(),
        ranking: order
            .into_iter()
            .map(|label| Ranked {
                label,
                name: names.get(label).cloned().unwrap_or_else(|| format!("class_{label}")),
                score: mean[label],
            })
            .collect(),
        seconds: t0.elapsed().as_secs_f64(),
    };
    write_json(&cfg.paths.report.join(FINGERPRINT_FILE), &fp)?;
    Ok(fp)
}

/// Plain-text view of an [`EvalReport`].
pub fn eval_table(r: &EvalReport, names: &[String]) -> String {
    let mut s = String::new();
    s += &format!("windows  {}\n", r.n);
    s += &format!("top-1    {:.4}\n", r.top1);
    s += &format!("top-{}    {:.4}\n", r.top_k, r.top5);
    let t = &r.timings;
    s += &format!("load {:.3}s  preprocess {:.3}s  infer {:.3}s\n\n", t.load_s, t.preprocess_s, t.infer_s);
    let w = names.iter().map(String::len).max().unwrap_or(4).max(4);
    s += &format!("{:w$}  predicted ->\n", "true");
    for (i, row) in r.confusion.iter().enumerate() {
        let name = names.get(i).map(String::as_str).unwrap_or("?");
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
        s += &format!("{name:w$}  {}\n", cells.join(""));
    }
    s
}

pub fn fingerprint_table(fp: &Fingerprint, top: usize) -> String {
    let mut s = format!("{} ({} windows, {:.3}s)\n", fp.capture.display(), fp.windows, fp.seconds);
    for (i, r) in fp.ranking.iter().take(top).enumerate() {
        s += &format!("{:>3}. {:<16} {:.4}\n", i + 1, r.name, r.score);
    }
    s
}

/// Class names for reports, from the SigMF manifest when present.
pub fn class_names(cfg: &RunConfig) -> Vec<String> {
    read_manifest(&cfg.paths.raw_dir())
        .map(|m| m.class_names)
        .unwrap_or_else(|_| (0..cfg.model.class_count).map(|c| format!("class_{c}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rfdcn_nn::train::PhaseTimings;

    #[test]
    fn softmax_normalises_and_keeps_order() {
        let p = softmax(&[1.0, 3.0, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(rank_classes(&p), vec![1, 2, 0]);
        let big = softmax(&[1000.0, 0.0]);
        assert!(big[0].is_finite() && big[0] > 0.999);
    }

    #[test]
    fn table_lists_every_class() {
        let r = EvalReport {
            n: 3,
            top1: 2.0 / 3.0,
            top5: 1.0,
            top_k: 2,
            confusion: vec![vec![1, 0], vec![1, 1]],
            timings: PhaseTimings::default(),
        };
        let t = eval_table(&r, &["alpha".into(), "beta".into()]);
        assert!(t.contains("top-1    0.6667"));
        assert!(t.lines().any(|l| l.starts_with("beta") && l.ends_with("   1   1")));
    }
}

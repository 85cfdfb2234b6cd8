//! On-disk dataset layouts.
//!
//! * SigMF dataset: one capture pair per device plus `manifest.json`. Window
//!   labels live in annotation `core:label`, split tags in `rfdcn:split`.
//! * Window store: `windows.bin` (f32 LE, interleaved I/Q, fixed window
//!   length) plus a `windows.json` index. Written after preprocessing.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::sigmf::{read_capture, write_capture, Datatype, SigmfMeta, DATA_EXT, META_EXT};
use crate::signal::{LabeledDataset, LabeledWindow, Split};
use crate::synth::DeviceImpairments;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_KEY: &str = "rfdcn:split";
pub const WINDOWS_BIN: &str = "windows.bin";
pub const WINDOWS_INDEX: &str = "windows.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDevice {
    pub name: String,
    pub label: usize,
    pub meta: String,
    pub data: String,
    pub windows: usize,
    pub splits: SplitCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impairments: Option<DeviceImpairments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub window_len: usize,
    pub datatype: String,
    pub devices: Vec<ManifestDevice>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MetaParse {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })
}

/// Writes one SigMF pair per class and the manifest. `devices`, when given,
/// records the ground-truth impairments next to each class.
pub fn write_sigmf_dataset(
    dataset: &LabeledDataset,
    dir: &Path,
    datatype: Datatype,
    devices: Option<&[DeviceImpairments]>,
) -> Result<Manifest> {
    dataset.validate()?;
    if let Some(d) = devices {
        if d.len() != dataset.class_count {
            return Err(Error::InvalidParameter(format!(
                "{} impairment records for {} classes",
                d.len(),
                dataset.class_count
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut entries = Vec::with_capacity(dataset.class_count);
    for (label, name) in dataset.class_names.iter().enumerate() {
        let windows: Vec<&LabeledWindow> = dataset.windows.iter().filter(|w| w.label == label).collect();
        let signals: Vec<_> = windows.iter().map(|w| w.signal.clone()).collect();
        let labels = vec![Some(name.clone()); signals.len()];
        let mut meta = SigmfMeta::for_signals(datatype, &signals, &labels)?;
        for (ann, w) in meta.annotations.iter_mut().zip(&windows) {
            ann.extra.insert(SPLIT_KEY.into(), Value::String(w.split.as_str().into()));
        }
        let meta_name = format!("{name}.{META_EXT}");
        let data_name = format!("{name}.{DATA_EXT}");
        write_capture(&meta, &signals, &dir.join(&meta_name), &dir.join(&data_name))?;
        let count = |s| windows.iter().filter(|w| w.split == s).count();
        entries.push(ManifestDevice {
            name: name.clone(),
            label,
            meta: meta_name,
            data: data_name,
            windows: windows.len(),
            splits: SplitCounts {
                train: count(Split::Train),
                val: count(Split::Val),
                test: count(Split::Test),
            },
            impairments: devices.map(|d| d[label]),
        });
    }
    let manifest = Manifest {
        class_names: dataset.class_names.clone(),
        sample_rate_hz: dataset.sample_rate_hz().unwrap_or(0.0),
        window_len: dataset.window_len().unwrap_or(0),
        datatype: datatype.as_str().into(),
        devices: entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST_FILE))
}

/// Loads a dataset written by [`write_sigmf_dataset`].
pub fn read_sigmf_dataset(dir: &Path) -> Result<LabeledDataset> {
    let manifest = read_manifest(dir)?;
    let mut windows = Vec::new();
    for dev in &manifest.devices {
        if dev.label >= manifest.class_names.len() {
            return Err(Error::InvalidDataset(format!(
                "device {} has label {} but only {} classes",
                dev.name,
                dev.label,
                manifest.class_names.len()
            )));
        }
        let (meta, signals) = read_capture(&dir.join(&dev.meta), &dir.join(&dev.data))?;
        for (i, signal) in signals.into_iter().enumerate() {
            let ann = meta.annotations.get(i);
            if let Some(label) = ann.and_then(|a| a.label.as_deref()) {
                if label != dev.name {
                    return Err(Error::InvalidDataset(format!(
                        "annotation {i} of {} labeled {label:?}",
                        dev.meta
                    )));
                }
            }
            let split = match ann.and_then(|a| a.extra.get(SPLIT_KEY)).and_then(Value::as_str) {
                Some(s) => Split::parse(s)
                    .ok_or_else(|| Error::InvalidMeta(format!("unknown split {s:?} in {}", dev.meta)))?,
                None => Split::Train,
            };
            windows.push(LabeledWindow {
                signal,
                label: dev.label,
                split,
            });
        }
    }
    LabeledDataset::new(windows, manifest.class_names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowEntry {
    pub label: usize,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowIndex {
    pub window_len: usize,
    pub sample_rate_hz: f64,
    pub class_names: Vec<String>,
    pub entries: Vec<WindowEntry>,
}

pub fn write_window_store(dataset: &LabeledDataset, dir: &Path) -> Result<PathBuf> {
    let window_len = dataset
        .window_len()
        .ok_or_else(|| Error::InvalidDataset("cannot store an empty dataset".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bin = dir.join(WINDOWS_BIN);
    let file = fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut out = BufWriter::new(file);
    for w in &dataset.windows {
        if w.signal.len() != window_len {
            return Err(Error::InvalidDataset("windows differ in length".into()));
        }
        for s in w.signal.samples() {
            out.write_all(&(s.re as f32).to_le_bytes())
                .and_then(|_| out.write_all(&(s.im as f32).to_le_bytes()))
                .map_err(|e| Error::io(&bin, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(&bin, e))?;

    let index = WindowIndex {
        window_len,
        sample_rate_hz: dataset.sample_rate_hz().unwrap_or(0.0),
        class_names: dataset.class_names.clone(),
        entries: dataset
            .windows
            .iter()
            .map(|w| WindowEntry {
                label: w.label,
                split: w.split,
                source_id: w.signal.source_id.clone(),
            })
            .collect(),
    };
    write_json(&dir.join(WINDOWS_INDEX), &index)?;
    Ok(bin)
}

pub fn read_window_store(dir: &Path) -> Result<LabeledDataset> {
    let index: WindowIndex = read_json(&dir.join(WINDOWS_INDEX))?;
    let bin = dir.join(WINDOWS_BIN);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let per_window = index.window_len * 8;
    let needed = per_window * index.entries.len();
    if bytes.len() < needed {
        return Err(Error::TruncatedData {
            path: bin,
            needed: needed as u64,
            available: bytes.len() as u64,
        });
    }
    let windows = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let chunk = &bytes[i * per_window..(i + 1) * per_window];
            let samples = chunk
                .chunks_exact(8)
                .map(|c| {
                    let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                    let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                    Complex64::new(re as f64, im as f64)
                })
                .collect();
            let mut signal = crate::signal::ComplexSignal::new(samples, index.sample_rate_hz)?;
            signal.source_id = e.source_id.clone();
            Ok(LabeledWindow {
                signal,
                label: e.label,
                split: e.split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(windows, index.class_names)
}

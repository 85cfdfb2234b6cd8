//! Complex sample windows and labeled datasets.

use std::collections::{BTreeMap, HashMap, HashSet};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default window length in samples (64 µs at 100 MSPS).
pub const DEFAULT_WINDOW_LEN: usize = 6400;

/// A sequence of I/Q samples with capture metadata.
///
/// Samples are stored as `Complex64`, which is `repr(C)` `(re, im)`, so the
/// backing buffer is interleaved `i0, q0, i1, q1, ...` exactly like a SigMF
/// data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_freq_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_time: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientSamples {
                needed: 1,
                available: 0,
            });
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            center_freq_hz: None,
            capture_time: None,
            source_id: None,
        })
    }

    /// Builds a signal from interleaved `i, q` pairs.
    pub fn from_interleaved(iq: &[f64], sample_rate_hz: f64) -> Result<Self> {
        if iq.len() % 2 != 0 {
            return Err(Error::InvalidParameter(
                "interleaved buffer has odd length".into(),
            ));
        }
        let samples = iq
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Self::new(samples, sample_rate_hz)
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn with_center_freq(mut self, hz: f64) -> Self {
        self.center_freq_hz = Some(hz);
        self
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Interleaved view `i0, q0, i1, q1, ...`.
    pub fn interleaved(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|s| [s.re, s.im]).collect()
    }

    /// Mean power `E|x|^2`.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Same metadata, new samples. The sample buffer must be non-empty.
    pub fn with_samples(&self, samples: Vec<Complex64>) -> Result<Self> {
        self.with_samples_and_rate(samples, self.sample_rate_hz)
    }

    pub fn with_samples_and_rate(&self, samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        let mut out = Self::new(samples, sample_rate_hz)?;
        out.center_freq_hz = self.center_freq_hz;
        out.capture_time = self.capture_time.clone();
        out.source_id = self.source_id.clone();
        Ok(out)
    }

    /// Applies `f` to every sample, keeping metadata.
    pub fn map(&self, f: impl FnMut(&Complex64) -> Complex64) -> Self {
        let mut out = self.clone();
        out.samples = self.samples.iter().map(f).collect();
        out
    }

    /// Contiguous sub-range `[start, start + len)` with the same metadata.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.samples.len() {
            return Err(Error::InsufficientSamples {
                needed: start + len.max(1),
                available: self.samples.len(),
            });
        }
        self.with_samples(self.samples[start..start + len].to_vec())
    }
}

/// Cuts `signal` into fixed-length windows starting every `stride` samples.
///
/// Returns `floor((len - window_len) / stride) + 1` windows.
pub fn window_signal(
    signal: &ComplexSignal,
    window_len: usize,
    stride: usize,
) -> Result<Vec<ComplexSignal>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "window_len and stride must be at least 1".into(),
        ));
    }
    if signal.len() < window_len {
        return Err(Error::InsufficientSamples {
            needed: window_len,
            available: signal.len(),
        });
    }
    let count = (signal.len() - window_len) / stride + 1;
    (0..count)
        .map(|w| signal.slice(w * stride, window_len))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub signal: ComplexSignal,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub windows: Vec<LabeledWindow>,
    pub class_count: usize,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    /// Builds a dataset and checks the shape invariants (shared window length
    /// and sample rate, labels in range). Split coverage is not checked here.
    pub fn new(windows: Vec<LabeledWindow>, class_names: Vec<String>) -> Result<Self> {
        let ds = Self {
            class_count: class_names.len(),
            windows,
            class_names,
        };
        ds.check_shape()?;
        Ok(ds)
    }

    fn check_shape(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::InvalidDataset("no classes".into()));
        }
        if self.class_names.len() != self.class_count {
            return Err(Error::InvalidDataset(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.class_count
            )));
        }
        if let Some(first) = self.windows.first() {
            let len = first.signal.len();
            let rate = first.signal.sample_rate_hz();
            for (i, w) in self.windows.iter().enumerate() {
                if w.signal.len() != len {
                    return Err(Error::InvalidDataset(format!(
                        "window {i} has {} samples, expected {len}",
                        w.signal.len()
                    )));
                }
                if w.signal.sample_rate_hz() != rate {
                    return Err(Error::InvalidDataset(format!(
                        "window {i} sample rate {} differs from {rate}",
                        w.signal.sample_rate_hz()
                    )));
                }
            }
        }
        if let Some(w) = self.windows.iter().find(|w| w.label >= self.class_count) {
            return Err(Error::InvalidDataset(format!(
                "label {} out of range for {} classes",
                w.label, self.class_count
            )));
        }
        Ok(())
    }

    /// Full invariant check: shape, every class present in train, and
    /// train/test drawn from disjoint transmissions where source ids exist.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        let counts = self.split_class_counts(Split::Train);
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidDataset(format!(
                "class {c} ({}) has no training windows",
                self.class_names[c]
            )));
        }
        self.check_disjoint_transmissions()
    }

    pub fn check_disjoint_transmissions(&self) -> Result<()> {
        let train: HashSet<&str> = self
            .windows
            .iter()
            .filter(|w| w.split == Split::Train)
            .filter_map(|w| w.signal.source_id.as_deref())
            .collect();
        match self
            .windows
            .iter()
            .filter(|w| w.split == Split::Test)
            .filter_map(|w| w.signal.source_id.as_deref())
            .find(|id| train.contains(id))
        {
            Some(id) => Err(Error::InvalidDataset(format!(
                "transmission {id} appears in both train and test"
            ))),
            None => Ok(()),
        }
    }

    pub fn window_len(&self) -> Option<usize> {
        self.windows.first().map(|w| w.signal.len())
    }

    pub fn sample_rate_hz(&self) -> Option<f64> {
        self.windows.first().map(|w| w.signal.sample_rate_hz())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledWindow> {
        self.windows.iter().filter(move |w| w.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn split_class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for w in self.split(split) {
            counts[w.label] += 1;
        }
        counts
    }
}

/// Integer allocation of `n` items over `fractions` by largest remainder, with
/// every split that has a non-zero fraction receiving at least one item.
fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, r) in counts.iter_mut().zip(&raw) {
        *c = r.floor() as usize;
    }
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            rest -= 1;
        }
    }
    for i in 0..3 {
        if fractions[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Re-assigns split tags per class so each split receives its fraction of the
/// class (within one window). Windows that share a `source_id` move together,
/// which keeps train and test transmissions disjoint.
pub fn stratified_split(
    dataset: &LabeledDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<LabeledDataset> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    let needed = fr.iter().filter(|&&f| f > 0.0).count();

    // class -> ordered groups of window indices
    let mut groups: Vec<BTreeMap<String, Vec<usize>>> = vec![BTreeMap::new(); dataset.class_count];
    for (i, w) in dataset.windows.iter().enumerate() {
        let key = match &w.signal.source_id {
            Some(id) => format!("s:{id}"),
            None => format!("w:{i:012}"),
        };
        groups[w.label].entry(key).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: HashMap<usize, Split> = HashMap::new();
    for (class, class_groups) in groups.iter().enumerate() {
        let mut units: Vec<&Vec<usize>> = class_groups.values().collect();
        if units.len() < needed {
            return Err(Error::ClassTooSmall {
                class,
                name: dataset.class_names[class].clone(),
                count: units.len(),
                needed,
            });
        }
        units.shuffle(&mut rng);
        let counts = allocate(units.len(), fr);
        let mut it = units.into_iter();
        for (split, &count) in Split::ALL.iter().zip(&counts) {
            for unit in it.by_ref().take(count) {
                for &i in unit {
                    assignment.insert(i, *split);
                }
            }
        }
    }

    let mut out = dataset.clone();
    for (i, w) in out.windows.iter_mut().enumerate() {
        w.split = assignment[&i];
    }
    Ok(out)
}

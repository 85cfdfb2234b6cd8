//! SigMF capture pairs: `<name>.sigmf-meta` (JSON) and `<name>.sigmf-data`
//! (raw little-endian interleaved I/Q).
//!
//! Two datatypes are supported, `cf32_le` and `ci16_le`. Integer samples are
//! normalized by 32768 (int16 full scale) on read and scaled back on write.
//! Keys this module does not model are kept in `extra` maps and written back
//! unchanged.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

pub const SIGMF_VERSION: &str = "1.0.0";
pub const META_EXT: &str = "sigmf-meta";
pub const DATA_EXT: &str = "sigmf-data";

/// Full-scale divisor for `ci16_le` samples.
pub const CI16_SCALE: f64 = 32768.0;

/// Annotation extension key carrying a transmission id.
pub const SOURCE_ID_KEY: &str = "rfdcn:source_id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Datatype {
    #[serde(rename = "cf32_le")]
    Cf32Le,
    #[serde(rename = "ci16_le")]
    Ci16Le,
}

impl Datatype {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cf32_le" => Ok(Datatype::Cf32Le),
            "ci16_le" => Ok(Datatype::Ci16Le),
            other => Err(Error::UnsupportedDatatype(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Datatype::Cf32Le => "cf32_le",
            Datatype::Ci16Le => "ci16_le",
        }
    }

    /// Bytes per complex sample (I and Q together).
    pub fn bytes_per_sample(self) -> usize {
        match self {
            Datatype::Cf32Le => 8,
            Datatype::Ci16Le => 4,
        }
    }

    fn decode(self, bytes: &[u8], out: &mut Vec<Complex64>) {
        match self {
            Datatype::Cf32Le => out.extend(bytes.chunks_exact(8).map(|b| {
                Complex64::new(
                    f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    f32::from_le_bytes([b[4], b[5], b[6], b[7]]) as f64,
                )
            })),
            Datatype::Ci16Le => out.extend(bytes.chunks_exact(4).map(|b| {
                Complex64::new(
                    i16::from_le_bytes([b[0], b[1]]) as f64 / CI16_SCALE,
                    i16::from_le_bytes([b[2], b[3]]) as f64 / CI16_SCALE,
                )
            })),
        }
    }

    fn encode(self, s: &Complex64, out: &mut Vec<u8>) {
        match self {
            Datatype::Cf32Le => {
                out.extend_from_slice(&(s.re as f32).to_le_bytes());
                out.extend_from_slice(&(s.im as f32).to_le_bytes());
            }
            Datatype::Ci16Le => {
                let q = |x: f64| (x * CI16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q(s.re).to_le_bytes());
                out.extend_from_slice(&q(s.im).to_le_bytes());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Global {
    #[serde(rename = "core:datatype")]
    datatype: String,
    #[serde(rename = "core:sample_rate")]
    pub sample_rate_hz: f64,
    #[serde(rename = "core:version", default = "default_version")]
    pub version: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn default_version() -> String {
    SIGMF_VERSION.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    #[serde(rename = "core:sample_start")]
    pub sample_start: u64,
    #[serde(rename = "core:frequency", default, skip_serializing_if = "Option::is_none")]
    pub center_freq_hz: Option<f64>,
    #[serde(rename = "core:datetime", default, skip_serializing_if = "Option::is_none")]
    pub datetime: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(rename = "core:sample_start")]
    pub sample_start: u64,
    #[serde(rename = "core:sample_count")]
    pub sample_count: u64,
    #[serde(rename = "core:label", default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Annotation {
    pub fn new(sample_start: u64, sample_count: u64, label: Option<String>) -> Self {
        Self {
            sample_start,
            sample_count,
            label,
            extra: Map::new(),
        }
    }

    fn end(&self) -> Option<u64> {
        self.sample_start.checked_add(self.sample_count)
    }
}

/// Parsed `.sigmf-meta` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmfMeta {
    pub global: Global,
    #[serde(default)]
    pub captures: Vec<Capture>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl SigmfMeta {
    pub fn new(datatype: Datatype, sample_rate_hz: f64) -> Self {
        Self {
            global: Global {
                datatype: datatype.as_str().to_string(),
                sample_rate_hz,
                version: default_version(),
                extra: Map::new(),
            },
            captures: vec![Capture {
                sample_start: 0,
                center_freq_hz: None,
                datetime: None,
                extra: Map::new(),
            }],
            annotations: Vec::new(),
            extra: Map::new(),
        }
    }

    /// Metadata with one annotation per signal, laid out back to back in the
    /// order given. Signal source ids are stored under [`SOURCE_ID_KEY`].
    pub fn for_signals(
        datatype: Datatype,
        signals: &[ComplexSignal],
        labels: &[Option<String>],
    ) -> Result<Self> {
        let first = signals
            .first()
            .ok_or_else(|| Error::InvalidParameter("no signals to describe".into()))?;
        if labels.len() != signals.len() {
            return Err(Error::InvalidParameter(format!(
                "{} labels for {} signals",
                labels.len(),
                signals.len()
            )));
        }
        let mut meta = Self::new(datatype, first.sample_rate_hz());
        meta.captures[0].center_freq_hz = first.center_freq_hz;
        meta.captures[0].datetime = first.capture_time.clone();
        let mut start = 0u64;
        for (s, label) in signals.iter().zip(labels) {
            let mut ann = Annotation::new(start, s.len() as u64, label.clone());
            if let Some(id) = &s.source_id {
                ann.extra.insert(SOURCE_ID_KEY.into(), Value::String(id.clone()));
            }
            meta.annotations.push(ann);
            start += s.len() as u64;
        }
        Ok(meta)
    }

    pub fn datatype(&self) -> Result<Datatype> {
        Datatype::parse(&self.global.datatype)
    }

    pub fn set_datatype(&mut self, dt: Datatype) {
        self.global.datatype = dt.as_str().to_string();
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::MetaParse {
            path: path.to_path_buf(),
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidMeta(e.to_string()))
    }

    /// Checks the structural invariants that do not depend on the data file.
    pub fn validate(&self) -> Result<()> {
        self.datatype()?;
        if !(self.global.sample_rate_hz > 0.0 && self.global.sample_rate_hz.is_finite()) {
            return Err(Error::InvalidMeta(format!(
                "core:sample_rate must be positive, got {}",
                self.global.sample_rate_hz
            )));
        }
        for pair in self.captures.windows(2) {
            if pair[1].sample_start <= pair[0].sample_start {
                return Err(Error::InvalidMeta(format!(
                    "captures not strictly ascending at sample_start {}",
                    pair[1].sample_start
                )));
            }
        }
        for ann in &self.annotations {
            if ann.sample_count == 0 {
                return Err(Error::InvalidMeta(format!(
                    "annotation at {} has zero samples",
                    ann.sample_start
                )));
            }
            if ann.end().is_none() {
                return Err(Error::InvalidMeta(format!(
                    "annotation at {} overflows the sample index",
                    ann.sample_start
                )));
            }
        }
        Ok(())
    }

    /// The capture segment in effect at `sample`.
    fn capture_at(&self, sample: u64) -> Option<&Capture> {
        self.captures.iter().rev().find(|c| c.sample_start <= sample)
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Derives the data file path that pairs with a `.sigmf-meta` path.
pub fn data_path_for(meta_path: &Path) -> PathBuf {
    meta_path.with_extension(DATA_EXT)
}

pub fn read_meta(meta_path: &Path) -> Result<SigmfMeta> {
    let text = std::fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta = SigmfMeta::parse(&text, meta_path)?;
    meta.validate()?;
    Ok(meta)
}

/// Reads a capture pair. Returns one signal per annotation, or a single
/// signal spanning the whole data file when there are no annotations.
pub fn read_capture(meta_path: &Path, data_path: &Path) -> Result<(SigmfMeta, Vec<ComplexSignal>)> {
    let meta = read_meta(meta_path)?;
    let dt = meta.datatype()?;
    let bps = dt.bytes_per_sample() as u64;

    let mut file = File::open(data_path).map_err(|e| Error::io(data_path, e))?;
    let file_len = file
        .metadata()
        .map_err(|e| Error::io(data_path, e))?
        .len();
    let available = file_len / bps;

    let ranges: Vec<(u64, u64)> = if meta.annotations.is_empty() {
        if available == 0 {
            return Err(Error::TruncatedData {
                path: data_path.to_path_buf(),
                needed: bps,
                available: file_len,
            });
        }
        vec![(0, available)]
    } else {
        meta.annotations
            .iter()
            .map(|a| (a.sample_start, a.sample_count))
            .collect()
    };

    let stem = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut signals = Vec::with_capacity(ranges.len());
    let mut buf = Vec::new();
    for (idx, &(start, count)) in ranges.iter().enumerate() {
        let end = start.checked_add(count).filter(|&e| e <= available);
        if end.is_none() {
            return Err(Error::TruncatedData {
                path: data_path.to_path_buf(),
                needed: start.saturating_add(count).saturating_mul(bps),
                available: file_len,
            });
        }
        let n_bytes = usize::try_from(count * bps)
            .map_err(|_| Error::InvalidMeta(format!("annotation {idx} too large")))?;
        buf.resize(n_bytes, 0);
        file.seek(SeekFrom::Start(start * bps))
            .and_then(|_| file.read_exact(&mut buf))
            .map_err(|e| Error::io(data_path, e))?;
        let mut samples = Vec::with_capacity(count as usize);
        dt.decode(&buf, &mut samples);

        let mut signal = ComplexSignal::new(samples, meta.global.sample_rate_hz)?;
        if let Some(c) = meta.capture_at(start) {
            signal.center_freq_hz = c.center_freq_hz;
            signal.capture_time = c.datetime.clone();
        }
        let source = meta
            .annotations
            .get(idx)
            .and_then(|a| a.extra.get(SOURCE_ID_KEY))
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("{stem}:{start}"));
        signal.source_id = Some(source);
        signals.push(signal);
    }
    Ok((meta, signals))
}

/// Writes `signals` back to back into the data file and `meta` as JSON.
///
/// Annotations in `meta` must fit inside the written samples.
pub fn write_capture(
    meta: &SigmfMeta,
    signals: &[ComplexSignal],
    meta_path: &Path,
    data_path: &Path,
) -> Result<()> {
    meta.validate()?;
    let dt = meta.datatype()?;
    if let Some(s) = signals
        .iter()
        .find(|s| s.sample_rate_hz() != meta.global.sample_rate_hz)
    {
        return Err(Error::InvalidParameter(format!(
            "signal sample rate {} does not match metadata {}",
            s.sample_rate_hz(),
            meta.global.sample_rate_hz
        )));
    }
    let total: u64 = signals.iter().map(|s| s.len() as u64).sum();
    if let Some(a) = meta
        .annotations
        .iter()
        .find(|a| a.end().is_none_or(|e| e > total))
    {
        return Err(Error::InvalidMeta(format!(
            "annotation [{}, +{}) exceeds {total} written samples",
            a.sample_start, a.sample_count
        )));
    }

    let file = File::create(data_path).map_err(|e| Error::io(data_path, e))?;
    let mut w = BufWriter::new(file);
    let mut bytes = Vec::new();
    for s in signals {
        bytes.clear();
        bytes.reserve(s.len() * dt.bytes_per_sample());
        for x in s.samples() {
            dt.encode(x, &mut bytes);
        }
        w.write_all(&bytes).map_err(|e| Error::io(data_path, e))?;
    }
    w.flush().map_err(|e| Error::io(data_path, e))?;

    let json = meta.to_json()?;
    std::fs::write(meta_path, json + "\n").map_err(|e| Error::io(meta_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use tempfile::tempdir;

    fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
        (
            dir.join(format!("{name}.{META_EXT}")),
            dir.join(format!("{name}.{DATA_EXT}")),
        )
    }

    fn random_signal(n: usize, seed: u64) -> ComplexSignal {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = (0..n)
            .map(|_| {
                Complex64::new(
                    rng.random_range(-1.0f32..1.0) as f64,
                    rng.random_range(-1.0f32..1.0) as f64,
                )
            })
            .collect();
        ComplexSignal::new(s, 100e6).unwrap()
    }

    #[test]
    fn sixteen_bytes_two_samples() {
        let dir = tempdir().unwrap();
        let (m, d) = paths(dir.path(), "tiny");
        let meta = SigmfMeta::new(Datatype::Cf32Le, 1e6);
        std::fs::write(&m, meta.to_json().unwrap()).unwrap();
        let mut raw = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&d, &raw).unwrap();
        let (_, sigs) = read_capture(&m, &d).unwrap();
        assert_eq!(sigs.len(), 1);
        assert_eq!(
            sigs[0].samples(),
            &[Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)]
        );
    }

    #[test]
    fn annotation_offset_matches_ramp() {
        // sample k holds (k, -k); an annotation at 100 must start at value 100
        // for both layouts, i.e. at byte 100 * bytes_per_sample.
        for dt in [Datatype::Cf32Le, Datatype::Ci16Le] {
            let dir = tempdir().unwrap();
            let (m, d) = paths(dir.path(), "ramp");
            let n = 6600;
            let mut raw = Vec::new();
            for k in 0..n {
                match dt {
                    Datatype::Cf32Le => {
                        raw.extend_from_slice(&(k as f32).to_le_bytes());
                        raw.extend_from_slice(&(-(k as f32)).to_le_bytes());
                    }
                    Datatype::Ci16Le => {
                        raw.extend_from_slice(&(k as i16).to_le_bytes());
                        raw.extend_from_slice(&(-(k as i16)).to_le_bytes());
                    }
                }
            }
            std::fs::write(&d, &raw).unwrap();
            let mut meta = SigmfMeta::new(dt, 100e6);
            meta.annotations.push(Annotation::new(100, 6400, Some("a".into())));
            std::fs::write(&m, meta.to_json().unwrap()).unwrap();
            let (_, sigs) = read_capture(&m, &d).unwrap();
            let scale = if dt == Datatype::Ci16Le { CI16_SCALE } else { 1.0 };
            assert_eq!(sigs[0].len(), 6400);
            assert_eq!(sigs[0].samples()[0].re * scale, 100.0);
            assert_eq!(sigs[0].samples()[6399].im * scale, -6499.0);
            let offset = 100 * dt.bytes_per_sample();
            assert_eq!(offset, if dt == Datatype::Ci16Le { 400 } else { 800 });
        }
    }

    #[test]
    fn ci16_normalization() {
        let dir = tempdir().unwrap();
        let (m, d) = paths(dir.path(), "ci16");
        std::fs::write(&m, SigmfMeta::new(Datatype::Ci16Le, 1e6).to_json().unwrap()).unwrap();
        let mut raw = Vec::new();
        raw.extend_from_slice(&1i16.to_le_bytes());
        raw.extend_from_slice(&(-1i16).to_le_bytes());
        std::fs::write(&d, &raw).unwrap();
        let (_, sigs) = read_capture(&m, &d).unwrap();
        assert_eq!(sigs[0].samples()[0], Complex64::new(1.0 / 32768.0, -1.0 / 32768.0));
    }

    #[test]
    fn cf32_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let (m, d) = paths(dir.path(), "rt");
        let sig = random_signal(1000, 9);
        let meta = SigmfMeta::new(Datatype::Cf32Le, sig.sample_rate_hz());
        write_capture(&meta, std::slice::from_ref(&sig), &m, &d).unwrap();
        let (back_meta, back) = read_capture(&m, &d).unwrap();
        assert_eq!(back.len(), 1, "empty annotation list reads back as one capture");
        assert_eq!(back[0].samples(), sig.samples());
        assert_eq!(back_meta.global, meta.global);
    }

    #[test]
    fn ci16_round_trip_within_one_step() {
        let dir = tempdir().unwrap();
        let (m, d) = paths(dir.path(), "rt16");
        let sig = random_signal(1000, 3);
        let meta = SigmfMeta::new(Datatype::Ci16Le, sig.sample_rate_hz());
        write_capture(&meta, std::slice::from_ref(&sig), &m, &d).unwrap();
        let (_, back) = read_capture(&m, &d).unwrap();
        for (a, b) in sig.samples().iter().zip(back[0].samples()) {
            assert!((a.re - b.re).abs() <= 1.0 / 32768.0);
            assert!((a.im - b.im).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn per_signal_annotations_and_source_ids() {
        let dir = tempdir().unwrap();
        let (m, d) = paths(dir.path(), "multi");
        let sigs: Vec<_> = (0..3)
            .map(|i| random_signal(50, i).with_source_id(format!("tx{i}")))
            .collect();
        let labels: Vec<_> = (0..3).map(|i| Some(format!("dev{i}"))).collect();
        let meta = SigmfMeta::for_signals(Datatype::Cf32Le, &sigs, &labels).unwrap();
        write_capture(&meta, &sigs, &m, &d).unwrap();
        let (meta2, back) = read_capture(&m, &d).unwrap();
        assert_eq!(back, sigs);
        assert_eq!(meta2.annotations[2].label.as_deref(), Some("dev2"));
    }

    #[test]
    fn unknown_keys_survive_rewrite() {
        let text = r#"{
  "global": {"core:datatype": "cf32_le", "core:sample_rate": 2e6, "core:version": "1.0.0",
             "core:author": "lab", "vendor:gain": 12.5},
  "captures": [{"core:sample_start": 0, "core:frequency": 2.4e9, "vendor:antenna": "A"}],
  "annotations": [{"core:sample_start": 0, "core:sample_count": 2, "core:comment": "hi"}],
  "vendor:top": [1, 2, 3]
}"#;
        let meta = SigmfMeta::parse(text, Path::new("x")).unwrap();
        let again = SigmfMeta::parse(&meta.to_json().unwrap(), Path::new("x")).unwrap();
        assert_eq!(meta, again);
        assert_eq!(again.global.extra["vendor:gain"], 12.5);
        assert_eq!(again.captures[0].extra["vendor:antenna"], "A");
        assert_eq!(again.annotations[0].extra["core:comment"], "hi");
        assert_eq!(again.extra["vendor:top"], serde_json::json!([1, 2, 3]));
    }

    #[test]
    fn truncated_data_is_reported() {
        let dir = tempdir().unwrap();
        let (m, d) = paths(dir.path(), "trunc");
        let mut meta = SigmfMeta::new(Datatype::Cf32Le, 1e6);
        meta.annotations.push(Annotation::new(0, 10, None));
        std::fs::write(&m, meta.to_json().unwrap()).unwrap();
        std::fs::write(&d, vec![0u8; 8 * 9]).unwrap();
        let err = read_capture(&m, &d).unwrap_err();
        assert!(err.to_string().contains("data shorter than metadata promises"), "{err}");
    }

    #[test]
    fn unsupported_datatype() {
        let dir = tempdir().unwrap();
        let (m, d) = paths(dir.path(), "u8");
        std::fs::write(
            &m,
            r#"{"global": {"core:datatype": "cu8", "core:sample_rate": 1.0}}"#,
        )
        .unwrap();
        std::fs::write(&d, [0u8; 4]).unwrap();
        let err = read_capture(&m, &d).unwrap_err();
        assert!(matches!(err, Error::UnsupportedDatatype(ref s) if s == "cu8"));
    }

    #[test]
    fn malformed_json_reports_byte_offset() {
        let dir = tempdir().unwrap();
        let (m, d) = paths(dir.path(), "bad");
        let text = "{\n  \"global\": {\n    \"core:datatype\": cf32_le\n  }\n}";
        std::fs::write(&m, text).unwrap();
        std::fs::write(&d, [0u8; 8]).unwrap();
        match read_capture(&m, &d).unwrap_err() {
            Error::MetaParse { offset, .. } => {
                assert_eq!(&text[offset..offset + 1], "c", "offset {offset}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unsorted_captures_rejected() {
        let mut meta = SigmfMeta::new(Datatype::Cf32Le, 1.0);
        let mut c = meta.captures[0].clone();
        c.sample_start = 0;
        meta.captures.push(c);
        assert!(meta.validate().is_err());
    }

    #[test]
    fn center_frequency_follows_capture_segment() {
        let dir = tempdir().unwrap();
        let (m, d) = paths(dir.path(), "segs");
        let sig = random_signal(20, 1);
        let mut meta = SigmfMeta::new(Datatype::Cf32Le, sig.sample_rate_hz());
        meta.captures[0].center_freq_hz = Some(1e9);
        let mut c2 = meta.captures[0].clone();
        c2.sample_start = 10;
        c2.center_freq_hz = Some(2e9);
        meta.captures.push(c2);
        meta.annotations.push(Annotation::new(0, 5, None));
        meta.annotations.push(Annotation::new(12, 5, None));
        write_capture(&meta, std::slice::from_ref(&sig), &m, &d).unwrap();
        let (_, back) = read_capture(&m, &d).unwrap();
        assert_eq!(back[0].center_freq_hz, Some(1e9));
        assert_eq!(back[1].center_freq_hz, Some(2e9));
        assert_eq!(back[1].samples(), &sig.samples()[12..17]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fuzzed_annotations_never_panic(start in any::<u64>(), count in any::<u64>(), file_samples in 0usize..64) {
            let dir = tempdir().unwrap();
            let (m, d) = paths(dir.path(), "fuzz");
            let mut meta = SigmfMeta::new(Datatype::Cf32Le, 1e6);
            meta.annotations.push(Annotation::new(start, count, None));
            std::fs::write(&m, meta.to_json().unwrap()).unwrap();
            std::fs::write(&d, vec![0u8; file_samples * 8]).unwrap();
            match read_capture(&m, &d) {
                Ok((_, sigs)) => {
                    prop_assert!(start + count <= file_samples as u64);
                    prop_assert_eq!(sigs[0].len() as u64, count);
                }
                Err(e) => {
                    let ok = matches!(e, Error::TruncatedData { .. } | Error::InvalidMeta(_));
                    prop_assert!(ok, "unexpected error: {}", e);
                }
            }
        }
    }
}

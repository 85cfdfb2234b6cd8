//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `RFDCNCK1`, a little-endian `u64` header length,
//! a JSON header, then every tensor as little-endian `f32` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelSpec};
use crate::params::{ParamKind, ParamStore, Plane};
use crate::real::Real;

pub const MAGIC: &[u8; 8] = b"RFDCNCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub plane: Plane,
    pub kind: ParamKind,
    /// Offset into the payload, in `f32` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub spec: ModelSpec,
    pub tensors: Vec<TensorEntry>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode<T: Real>(spec: &ModelSpec, store: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut payload = Vec::new();
    let mut offset = 0;
    for (_, p) in store.iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            plane: p.plane,
            kind: p.kind,
            offset,
        });
        offset += p.value.len();
        for v in p.value.iter() {
            payload.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        spec: spec.clone(),
        tensors,
    })
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<(ModelSpec, ParamStore<T>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(bad("header runs past end of file"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let payload = &body[hlen..];
    let mut store = ParamStore::new();
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let (lo, hi) = (t.offset * 4, (t.offset + n) * 4);
        if hi > payload.len() {
            return Err(Error::Checkpoint(format!("tensor {} truncated", t.name)));
        }
        let vals: Vec<T> = payload[lo..hi]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        let value = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&t.shape), vals).expect("length checked");
        store.add(t.name.clone(), value, t.kind, t.plane);
    }
    Ok((header.spec, store))
}

pub fn save<T: Real>(path: &Path, model: &Model<T>) -> Result<()> {
    let bytes = encode(&model.spec, &model.store)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io(path))?;
    f.write_all(&bytes).map_err(io(path))
}

/// Rebuilds the model from the stored spec and loads every tensor.
pub fn load<T: Real>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(io(path))?;
    let (spec, store) = decode::<T>(&bytes)?;
    let mut model = build_model::<T>(&spec, 0)?;
    model.store.load_from(&store)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Arch;

    fn spec() -> ModelSpec {
        let mut s = ModelSpec::new(Arch::Cdcn, 3, 64);
        s.cdcn.kernel = 8;
        s.cdcn.conv_channels = 2;
        s.cdcn.pool = 4;
        s.cdcn.dense = 5;
        s
    }

    #[test]
    fn round_trip_f32_exact() {
        let m = build_model::<f32>(&spec(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &m).unwrap();
        let back = load::<f32>(&p).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn header_is_self_describing() {
        let m = build_model::<f32>(&spec(), 7).unwrap();
        let bytes = encode(&m.spec, &m.store).unwrap();
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let h: Header = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(h.tensors.len(), m.store.len());
        let total: usize = h.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        assert_eq!(bytes.len(), 16 + hlen + 4 * total);
        assert!(h.tensors.iter().any(|t| t.plane == Plane::A && t.kind == ParamKind::Weight));
    }

    #[test]
    fn corrupt_files_rejected() {
        let m = build_model::<f32>(&spec(), 7).unwrap();
        let bytes = encode(&m.spec, &m.store).unwrap();
        assert!(decode::<f32>(&bytes[..bytes.len() - 4]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f32>(&bad).unwrap_err().to_string().contains("magic"));
        assert!(decode::<f32>(&bytes[..10]).is_err());
    }
}

use std::path::PathBuf;

use rfdcn_core::Split;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("insufficient batch for covariance: batch size {batch}, need at least 2")]
    InsufficientBatch { batch: usize },
    #[error("backward on consumed graph")]
    GraphConsumed,
    #[error("backward on detached graph: loss does not depend on any trainable input")]
    Detached,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("divergence: {0}")]
    NonFinite(String),
    #[error("empty {0:?} split")]
    EmptySplit(Split),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] rfdcn_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

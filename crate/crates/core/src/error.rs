use std::path::PathBuf;

/// Errors produced by the signal, I/O and DSP layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class too small: class {class} ({name}) has {count} windows, need at least {needed}")]
    ClassTooSmall {
        class: usize,
        name: String,
        count: usize,
        needed: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unsupported datatype: {0}")]
    UnsupportedDatatype(String),

    #[error("data shorter than metadata promises: {path}: need {needed} bytes, file has {available}")]
    TruncatedData {
        path: PathBuf,
        needed: u64,
        available: u64,
    },

    #[error("metadata parse error in {path} at byte {offset}: {message}")]
    MetaParse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("invalid metadata: {0}")]
    InvalidMeta(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no spectral peak: signal has zero power")]
    NoSpectralPeak,

    #[error("cannot set SNR on zero signal")]
    ZeroPowerSignal,

    #[error("payload exceeds window: {bits} bits, capacity {capacity}")]
    PayloadExceedsWindow { bits: usize, capacity: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

//! Signal plumbing for protocol-agnostic RF device fingerprinting.
//!
//! * [`signal`]: complex sample windows and labeled datasets.
//! * [`sigmf`]: reader/writer for SigMF capture pairs.
//! * [`dsp`]: basebanding, Butterworth filtering, decimation, cropping and
//!   augmentation.
//! * [`synth`]: software transmitters with per-device hardware impairments.
//! * [`store`]: SigMF dataset directories and the preprocessed window store.

pub mod dsp;
pub mod error;
pub mod sigmf;
pub mod signal;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use signal::{ComplexSignal, LabeledDataset, LabeledWindow, Split};

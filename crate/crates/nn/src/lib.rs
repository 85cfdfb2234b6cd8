pub mod checkpoint;
pub mod complex;
pub mod error;
pub mod init;
pub mod layers;
pub mod models;
pub mod optim;
pub mod params;
pub mod real;
pub mod recurrent;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use params::{ParamId, ParamKind, ParamStore, Plane};
pub use real::Real;
pub use tape::{Gradients, PoolKind, Tape, Var};

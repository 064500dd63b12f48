//! Fuzzy attention transformer for paired two-stream physiological sequence
//! classification, with a synthetic hemodynamic data generator, a training
//! harness and an interpretability toolkit.

pub mod analysis;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod fuzzy;
pub mod init;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod param;
pub mod stats;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use param::{Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

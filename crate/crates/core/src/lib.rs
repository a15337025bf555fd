pub mod autodiff;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod user;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision model, the configuration used by the CLI and tests.
pub type Model = model::MmRec<f64>;
pub type Tensor = tensor::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type ParamStore = autodiff::ParamStore<f64>;

//! Build, train, evaluate and architecture-search small configurable
//! residual CNNs on a from-scratch autodiff engine.

pub mod arch;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};

//! Train several independent neural networks as one hybrid model.
//!
//! Submitted models are merged into a [`unifier::HybridModel`] whose
//! sub-models share nothing but a routing input and output. A scheduler orders
//! their epochs, a single trainer executes them, and each finished sub-model is
//! separated and returned as soon as its last epoch completes.

pub mod autograd;
pub mod dataset;
pub mod demo;
pub mod error;
pub mod memory;
pub mod model;
pub mod rng;
pub mod scheduler;
pub mod separator;
pub mod service;
pub mod tensor;
pub mod tensor_file;
pub mod trainer;
pub mod unifier;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::{Scalar, Tensor};

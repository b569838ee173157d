//! Three-network infrared small-target detector: a recall-oriented
//! densely connected transformer (prosecution), a precision-oriented
//! plain vision transformer (defendant), and a convolutional confidence
//! scorer (jury) whose outputs weight the two detection masks.
//!
//! The numeric core is generic over the scalar type; the networks,
//! training loop, and tooling use the `f64` aliases below.

pub mod analysis;
pub mod blocks;
pub mod checks;
pub mod config;
pub mod data;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub mod error;

pub use error::{Error, Result};

/// Default scalar for model code: finite-difference verification wants
/// the precision, and desk-scale throughput does not miss f32.
pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type Gradients = tensor::Gradients<f64>;

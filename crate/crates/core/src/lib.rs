//! Zero-shot adaptation of a frozen text-only translation model into a
//! multimodal one, trained only on monolingual captioned images.

pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod pipeline;
pub mod scalar;
pub mod synthcorpus;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Tensor = numerics::Tensor<f64>;
pub type Graph = numerics::Graph<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type Checkpoint = model::Checkpoint<f64>;
pub type Batch = objectives::Batch<f64>;

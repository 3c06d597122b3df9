//! Cross-lingual natural language inference with multilingual soft prompts.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the default precision.

pub mod augment;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod model;
pub mod objective;
pub mod optim;
pub mod prompt;
pub mod scalar;
pub mod seed;
pub mod trainer;
pub mod verbalizer;
pub mod vocab;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = model::ModelState<f64>;
pub type Model32 = model::ModelState<f32>;
pub type Distribution = model::MaskDistribution<f64>;
pub type Breakdown = objective::LossBreakdown<f64>;

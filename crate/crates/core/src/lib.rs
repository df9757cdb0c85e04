//! Audit and mitigate filter bubbles in a sequential recommender.
//!
//! The pipeline goes: ingest interaction logs ([`ingest`]), derive item
//! communities from the interaction graph ([`community`]), train a
//! checkpointed LSTM next-item model ([`model`]), measure recommendation
//! diversity against user histories ([`diversity`]), partition data points
//! into diversity categories ([`category`]), trace training-data influence
//! between categories over the saved checkpoints ([`influence`]), and retrain
//! on cleansed/augmented data ([`modify`]).
//!
//! All numeric kernels are generic over the scalar type through [`Scalar`];
//! the pipeline itself runs in `f64` (see the aliases below).

pub mod category;
pub mod community;
pub mod diversity;
pub mod error;
pub mod influence;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod modify;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Model parameters at the precision used by the pipeline.
pub type ModelParams64 = model::ModelParams<f64>;
/// Single-precision parameters, for memory-constrained experimentation.
pub type ModelParams32 = model::ModelParams<f32>;
/// Checkpoint at pipeline precision.
pub type Checkpoint64 = model::Checkpoint<f64>;

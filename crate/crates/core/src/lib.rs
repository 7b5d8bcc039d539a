//! Core library for the communal-violence text classification workbench.
//!
//! The numeric parts (training, ensembling, metrics, explanations) are generic
//! over a [`Scalar`] type so the same code runs in `f32` or `f64`. The aliases
//! at the bottom of this file pin the `f64` instantiation used by the CLI.

pub mod augment;
pub mod corpus;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod labels;
pub mod linalg;
pub mod metrics;
pub mod preprocess;
pub mod rng;
pub mod scalar;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use labels::{DecisionLabel, LabelVector, ViolenceClass, NUM_CLASSES};
pub use scalar::Scalar;

/// Per-class probabilities in double precision.
pub type ProbabilityMatrix = trainer::ProbMatrix<f64>;
/// Per-class probabilities in single precision.
pub type ProbabilityMatrix32 = trainer::ProbMatrix<f32>;
pub type ClassWeights = trainer::ClassWeightsOf<f64>;
pub type Checkpoint = trainer::CheckpointOf<f64>;
pub type Encoder = trainer::TinyEncoder<f64>;
pub type StackerModel = ensemble::Stacker<f64>;
pub type MetricsReport = metrics::Report<f64>;
pub type Explanation = diagnostics::ExplanationOf<f64>;

//! Bayesian regression models for per-project software metric thresholds.
//!
//! The library ingests per-file metric observations (one row per file, with a
//! binary architectural-role indicator and a coupling count), fits three
//! regression models of the log-transformed metric — a single pooled line, an
//! independent line per project, and a hierarchical partial-pooling model —
//! via Hamiltonian Monte Carlo, compares them by per-project RMSE, and turns
//! the partial-pooling posterior into per-project 70/80/90% risk thresholds
//! on the original metric scale.

pub mod corpus;
pub mod diagnostics;
pub mod effects;
mod error;
pub mod inference;
pub mod models;
pub mod sampler;
pub mod synth;
pub mod thresholds;

pub use corpus::{Corpus, MetricRecord, ProjectStats};
pub use error::{Error, Result};
pub use inference::{FitResult, PointEstimates, RmseOptions, RmseTable};
pub use models::{ModelKind, ModelSpec, RegressionData};
pub use sampler::{PosteriorSamples, SamplerConfig};
pub use synth::GenSpec;
pub use thresholds::ThresholdReport;

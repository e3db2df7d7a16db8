//! Dynamic dependency-graph learning from multivariate timeseries.
//!
//! The crate learns, per subject and per time window, a weighted dependency
//! graph over signal regions, and classifies subjects from the sequence of
//! graphs — trained end-to-end through a single loss. Everything numeric sits
//! on a self-contained reverse-mode autodiff core (`tensor`).
//!
//! Module map:
//! - [`tensor`]: dense tensors, autodiff tape, conv/batch-norm kernels, AdamW
//! - [`params`]: name-addressable parameter and batch-norm state stores
//! - [`learner`]: windowing, temporal encoder, attention adjacency, features
//! - [`classifier`]: gated graph recurrences, pooling, temporal attention
//! - [`objective`]: classification loss plus graph regularizers
//! - [`model`]: the full learner→classifier→loss composition
//! - [`synth`]: planted-graph VAR(1) dataset generator
//! - [`data`]: dataset directory format (signals, labels, metadata)
//! - [`trainer`]: splits, oversampling, training loop, checkpoints
//! - [`evaluation`]: accuracy/AUROC, stochastic-order comparison, importance
//! - [`config`]: run configuration parsing, overrides, and echoing
//! - [`cli`]: command implementations behind the thin binary

pub mod classifier;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod learner;
pub mod model;
pub mod objective;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

//! Experiment plumbing behind the `cbl` binary.
//!
//! [`experiment::run`] drives a full seeded comparison from an
//! [`ExperimentConfig`]: data, split, per-scheme weights from the training
//! split, training, evaluation and the comparison table. Every artifact is
//! listed with its SHA-256 digest in `MANIFEST.json`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod manifest;

pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;

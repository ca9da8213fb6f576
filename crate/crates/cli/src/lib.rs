//! Experiment harness for the federated simulation engine: configuration
//! files, seed sweeps, ablations, metric export and run comparison.
//!
//! The `fedmmx` binary is a thin wrapper over [`commands`].

pub mod commands;
pub mod compare;
pub mod config;
pub mod experiment;
pub mod output;

use std::path::PathBuf;

use fedmmx_core::data::DataError;
use fedmmx_core::fed::FedError;
use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: {source}")]
    Seed { seed: u64, source: FedError },
    #[error("seed {seed}: {source}")]
    Data { seed: u64, source: DataError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Log { path: PathBuf, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("compare needs at least one run directory")]
    NoRuns,
}

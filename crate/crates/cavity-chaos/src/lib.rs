//! Experiment driver for the cavity atom-field chaos simulator.
//!
//! Reads TOML experiment configurations, runs them on a thread pool and
//! writes plot-ready CSV or JSON files. The numerics live in
//! `cavity-chaos-core`.

pub mod config;
pub mod output;
pub mod pool;
pub mod run;

use std::path::PathBuf;

pub use config::{ExperimentConfig, ExperimentKind, Format};
pub use output::{Data, Document, Table};
pub use pool::ThreadPool;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("invalid config: {0}")]
    Invalid(String),

    #[error("config has no [{0}] block")]
    MissingBlock(&'static str),

    #[error("config is written for `{declared}` but `{requested}` was requested")]
    KindMismatch {
        declared: ExperimentKind,
        requested: ExperimentKind,
    },

    #[error(transparent)]
    Model(#[from] cavity_chaos_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed output file: {0}")]
    Format(String),

    #[error("thread pool: {0}")]
    Pool(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

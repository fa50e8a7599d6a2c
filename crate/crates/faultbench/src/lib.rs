//! Standard-library companion to `faultbench-core`: IDX and model file IO,
//! dataset download, flat experiment configs, CSV/JSON reports, the run
//! cache and the reproduction studies behind the `faultbench` binary.

pub mod config;
pub mod datasets;
pub mod fetch;
pub mod io;
pub mod report;
pub mod run;
pub mod studies;

use std::path::PathBuf;

pub use config::{ConfigError, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("fetch: {0}")]
    Fetch(#[from] fetch::FetchError),
    #[error(transparent)]
    Core(#[from] faultbench_core::Error),
    #[error("{0}")]
    MissingData(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error("writing {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

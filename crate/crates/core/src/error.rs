use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid prior hyperparameters: {0}")]
    InvalidHyper(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("labels must be 0 or 1 for classification (row {row} has {value})")]
    NonBinaryLabel { row: usize, value: f64 },

    #[error("training diverged at iteration {iteration}: objective is {value}")]
    Diverged { iteration: usize, value: f64 },

    #[error("restricted Hessian of size {size} exceeds the cap of {cap}")]
    HessianTooLarge { size: usize, cap: usize },

    #[error("negated Hessian is not positive definite, even after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("all {0} tries failed")]
    AllTriesFailed(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

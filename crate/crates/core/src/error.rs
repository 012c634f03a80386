use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsneError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {message}")]
    Parse { path: PathBuf, row: usize, message: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient at point {index}")]
    Diverged { index: usize },

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T, E = TsneError> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing binding for leaf `{0}`")]
    MissingBinding(String),

    #[error("backward called before evaluate")]
    NotEvaluated,

    #[error("unknown graph output `{0}`")]
    UnknownOutput(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("kernel fit did not converge: best sup relative error {best_error:.3e} ({detail})")]
    FitNotConverged { best_error: f64, detail: String },

    #[error("design matrix is rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("empty data: {0}")]
    Empty(String),

    #[error("archive format: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

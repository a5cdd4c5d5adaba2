use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SpineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SpineError {
    /// Model or structure wiring does not satisfy its invariants.
    #[error("structure error: {0}")]
    Structure(String),

    /// Input vector has the wrong shape or contains non-finite values.
    #[error("input error: {0}")]
    Input(String),

    /// A gradient or intermediate value became non-finite.
    #[error("numerical error in component {component}: {message}")]
    Numerical { component: usize, message: String },

    #[error("non-finite gradient at parameter {index} (value {value})")]
    NonFiniteGradient { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: offset {offset}: {message}")]
    Idx {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SpineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpineError::Io {
            path: path.into(),
            source,
        }
    }
}

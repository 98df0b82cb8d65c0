use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} at PRI {pri} has range {range_m} m, outside [{lo}, {hi}] m")]
    RangeOutOfWindow {
        node: usize,
        pri: usize,
        range_m: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("least-squares system is numerically singular (condition {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("only {found} corners found, {required} required")]
    InsufficientCorners { found: usize, required: usize },

    #[error("corner filtering needs at least {required} candidates, got {found}")]
    Cardinality { found: usize, required: usize },

    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error("manifest schema error: {0}")]
    Schema(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

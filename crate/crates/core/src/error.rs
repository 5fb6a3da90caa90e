use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for axis of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("weight row for node {node} is not strictly lower triangular (nonzero coefficient on node {offending})")]
    NotAcyclic { node: usize, offending: usize },

    #[error("conditioning block is singular for nodes {nodes:?}")]
    SingularConditioning { nodes: Vec<usize> },

    #[error("row {row} has no observed entries")]
    EmptyRow { row: usize },

    #[error("column {col} has no observed entries")]
    EmptyColumn { col: usize },

    #[error("entry ({row}, {col}) cannot be imputed: {reason}")]
    Unimputable {
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    #[error("{0}")]
    Undefined(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

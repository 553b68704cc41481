use std::path::PathBuf;

use thiserror::Error;

/// Shape disagreement between two operands.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch in {op}: {left} vs {right}")]
pub struct ShapeError {
    pub op: &'static str,
    pub left: String,
    pub right: String,
}

impl ShapeError {
    pub fn new(op: &'static str, left: impl Into<String>, right: impl Into<String>) -> Self {
        Self {
            op,
            left: left.into(),
            right: right.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

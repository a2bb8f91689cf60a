use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} on {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid architecture at node {node}: {reason}")]
    Architecture { node: usize, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("insufficient entries: need {needed}, have {available}")]
    Insufficient { needed: usize, available: usize },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("graph too large for exact edit distance: {n} nodes exceeds limit {limit}")]
    GedLimit { n: usize, limit: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

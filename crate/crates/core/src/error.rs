use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid partition request: {0}")]
    Partition(String),

    #[error("vertex {vertex} has no owner (assignment covers {covered} vertices)")]
    MissingOwner { vertex: usize, covered: usize },

    #[error("{0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("missing checkpoint for layer {layer}, chunk ({partition}, {chunk})")]
    MissingCheckpoint {
        layer: usize,
        partition: usize,
        chunk: usize,
    },

    #[error("internal consistency violation: {0}")]
    Consistency(String),

    #[error(transparent)]
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

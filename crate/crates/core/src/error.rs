use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the unlearning pipeline.
///
/// Every variant maps onto a stable error class name (see [`Error::class`])
/// which the command-line driver prints in its single-line diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node id {id} out of range for graph with {n} nodes")]
    Index { id: usize, n: usize },
    #[error("train and test masks overlap at node {0}")]
    Mask(usize),
    #[error("{0}")]
    Data(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Request(String),
    #[error("class {0} has no exemplar to build a prototype from")]
    Prototype(usize),
    #[error("{0}")]
    State(String),
    #[error("{0}")]
    Metric(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> &'static str {
        match self {
            Error::Index { .. } => "IndexError",
            Error::Mask(_) => "MaskError",
            Error::Data(_) => "DataError",
            Error::Shape { .. } => "ShapeError",
            Error::Config(_) => "ConfigError",
            Error::Request(_) => "RequestError",
            Error::Prototype(_) => "PrototypeError",
            Error::State(_) => "StateError",
            Error::Metric(_) => "MetricError",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Io { .. } => "IoError",
        }
    }

    pub fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the pipeline. Each variant names the stage that failed so
/// callers can report which operation rejected its input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csv: {0}")]
    Csv(String),

    #[error("timestamp: {0}")]
    Timestamp(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("impute: {0}")]
    Impute(String),

    #[error("preprocess: {0}")]
    Preprocess(String),

    #[error("signal: {0}")]
    Signal(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("graph: {0}")]
    Graph(String),

    #[error("training: {0}")]
    Training(String),

    #[error("weights file: {0}")]
    WeightsFile(String),

    #[error("model: {0}")]
    Model(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    /// The loss (or an update) stopped being finite. Usually a learning rate
    /// or penalty that is far too large.
    #[error("divergence: {0}")]
    NonFinite(String),

    /// A mask removed every row or every column of a layer.
    #[error("empty layer `{layer}`: all {axis} pruned (lambda/rho too aggressive?)")]
    EmptyLayer { layer: String, axis: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code used by the command-line driver:
    /// 1 usage, 2 numeric failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::ShapeMismatch { .. } => 1,
            Error::NonFinite(_) | Error::EmptyLayer { .. } => 2,
            Error::Format(_) | Error::Io(_) => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

use std::io;

use thiserror::Error;

/// Errors raised by the operator library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two inputs disagree on dimensions.
    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },

    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Precondition(String),

    /// A file or byte stream could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    /// Optimization produced a non-finite loss.
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(
        what: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

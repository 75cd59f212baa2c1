//! Crate-wide error type.
//!
//! Variants are grouped by how a front end should report them: invalid
//! arguments and malformed configuration are user errors, [`Error::Format`]
//! and [`Error::Io`] are file-level problems, and [`Error::Numerical`] covers
//! degenerate inputs and solver failures discovered mid-computation.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments, incompatible shapes, or invalid configuration.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A raster file that exists but cannot be interpreted.
    #[error("raster format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Degenerate data or a solver that left the realm of finite numbers.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Prefix the message with pipeline context (tile index, stage name, ...).
    pub fn with_context(self, context: &str) -> Error {
        match self {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{context}: {m}")),
            Error::Format(m) => Error::Format(format!("{context}: {m}")),
            Error::Io(e) => Error::Format(format!("{context}: i/o error: {e}")),
            Error::Numerical(m) => Error::Numerical(format!("{context}: {m}")),
        }
    }

    fn invalid(msg: impl Into<String>) -> Error {
        Error::InvalidInput(msg.into())
    }
}

/// Shorthand constructors; keeps call sites to one line.
pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::invalid(msg))
}

pub(crate) fn numerical<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numerical(msg.into()))
}

pub(crate) fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by the fusion engine, simulator, and file formats.
#[derive(Debug, Error)]
pub enum MoefError {
    /// A computation produced or received non-finite values it cannot recover from.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An argument violated a documented domain constraint.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs arrived out of order or with mismatched shapes.
    #[error("sequence error: {0}")]
    Sequence(String),

    /// A file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MoefError {
    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        MoefError::Numerical(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        MoefError::Domain(msg.into())
    }

    pub(crate) fn sequence(msg: impl Into<String>) -> Self {
        MoefError::Sequence(msg.into())
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        MoefError::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MoefError>;

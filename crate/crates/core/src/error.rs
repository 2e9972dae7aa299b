//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file (potential table, config).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A model or argument violates a structural invariant.
    #[error("invalid model: {0}")]
    Model(String),

    /// The requested collision is classically impossible.
    #[error("forbidden geometry: {0}")]
    Forbidden(String),

    /// The time propagation failed (step underflow, norm blow-up, bad bounds).
    #[error("propagation failed: {0}")]
    Propagation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

impl Error {
    pub fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub fn propagation(msg: impl Into<String>) -> Self {
        Error::Propagation(msg.into())
    }

    /// True for failures of the physics (not of the inputs): used by the CLI
    /// to pick exit codes.
    pub fn is_physics(&self) -> bool {
        matches!(self, Error::Forbidden(_) | Error::Propagation(_))
    }
}

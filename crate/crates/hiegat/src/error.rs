//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HiegatError {
    /// Tensor shapes incompatible for the requested operation.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A precondition on operation inputs was violated.
    #[error("invalid input to {op}: {message}")]
    InvalidInput { op: &'static str, message: String },

    /// Malformed corpus or cache file.
    #[error("format error in {path} at line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    /// Checkpoint cannot be loaded against the current model/corpus.
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    /// Training aborted because the loss stopped being finite.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HiegatError>;

impl HiegatError {
    pub fn invalid(op: &'static str, message: impl Into<String>) -> Self {
        HiegatError::InvalidInput {
            op,
            message: message.into(),
        }
    }

    pub fn dims(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        HiegatError::DimensionMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

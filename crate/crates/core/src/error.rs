//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by graph construction, diffusion, training, data
/// generation, and evaluation.
#[derive(Error, Debug)]
pub enum EdgeDiffError {
    /// A caller-supplied value violated a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor shapes do not line up.
    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: String,
        got: String,
        context: String,
    },

    /// A record in a dataset file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Filesystem or serialization failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A checkpoint manifest or its sidecar binary is unusable.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training or sampling produced non-finite numbers.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A generator could not satisfy its spec within its attempt budget.
    #[error("generation error: {0}")]
    Generation(String),
}

pub type Result<T> = std::result::Result<T, EdgeDiffError>;

impl EdgeDiffError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        EdgeDiffError::InvalidInput(msg.into())
    }

    pub fn shape(expected: impl Into<String>, got: impl Into<String>, context: &str) -> Self {
        EdgeDiffError::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
            context: context.to_string(),
        }
    }
}

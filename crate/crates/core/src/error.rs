use thiserror::Error;

use crate::bayescg::SolveTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value produced by {stage}")]
    NonFinite { stage: String },

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("weight operator is not positive semidefinite: u^T W u = {value:e}")]
    NotPsd { value: f64 },

    #[error("search direction is not normalized: ||s||_W = {norm}")]
    NotNormalized { norm: f64 },

    #[error("Gram matrix is singular: direction {index} is dependent on earlier directions")]
    SingularGram { index: usize },

    #[error("dense oracle is capped at dimension {max}, got {dim}")]
    TooLarge { dim: usize, max: usize },

    #[error("residual check failed: relative residual {relative:e} exceeds {tolerance:e}")]
    ResidualCheck { relative: f64, tolerance: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solve aborted at iteration {}: {source}", trace.records.len())]
    SolveFailed {
        source: Box<Error>,
        trace: Box<SolveTrace>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures reported by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GcnnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index {index} out of range (table holds {len})")]
    OutOfRange { index: usize, len: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("degenerate alignment in block starting at {block_start}: smallest singular value {sigma_min:e}")]
    DegenerateAlignment { block_start: usize, sigma_min: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
}

pub type Result<T> = std::result::Result<T, GcnnError>;

pub(crate) fn invalid(msg: impl Into<String>) -> GcnnError {
    GcnnError::InvalidArgument(msg.into())
}

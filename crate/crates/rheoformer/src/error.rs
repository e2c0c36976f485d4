//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RheoError {
    #[error("shape mismatch in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward requires a scalar loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("backward called twice without resetting gradients")]
    BackwardRepeated,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("integration diverged at step {step}")]
    Diverged { step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("covariance factorization failed: {0}")]
    Factorization(String),
    #[error("bad magic bytes: expected {expected:?}")]
    MagicMismatch { expected: &'static str },
    #[error("payload size mismatch: header declares {declared} bytes, file holds {actual}")]
    SizeMismatch { declared: u64, actual: u64 },
    #[error("duplicate channel name: {0}")]
    DuplicateChannel(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("missing weight array: {0}")]
    MissingArray(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RheoError>;

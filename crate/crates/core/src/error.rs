use thiserror::Error;

/// Errors raised by the discretization, solvers and diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value encountered at time index {time_index}")]
    NonFinite { time_index: usize },

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    SolverResidual { residual: f64, tolerance: f64 },

    #[error("line search stalled after {halvings} halvings at iteration {iteration}")]
    LineSearchStall { iteration: usize, halvings: usize },

    #[error("malformed trajectory file: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

use thiserror::Error;

/// Errors raised by the solvers, oracles and experiment runner.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported norm exponent p = {0}: only 1 < p < inf is supported")]
    UnsupportedNorm(f64),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// The iteration budget ran out. Carries the last iterate and its residual.
    #[error("not converged after {iterations} iterations (residual {residual:.3e})")]
    NonConverged {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidArgument(msg.into())
}

//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("optimum solve did not converge after {iterations} Newton iterations (|grad| = {grad_norm:.3e})")]
    OptimumNotFound { iterations: usize, grad_norm: f64 },

    #[error("iterate diverged at step {step}: |theta - theta*| = {norm:.3e} exceeds guard {guard:.3e}")]
    Divergence { step: u64, norm: f64, guard: f64 },

    #[error("step size {gamma} outside stable range (0, {limit})")]
    StepSize { gamma: f64, limit: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tolerance not reached: {0}")]
    ToleranceNotReached(String),

    #[error("estimate below noise floor: {0}")]
    NoiseFloor(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attaches a file path to an I/O error.
    pub fn file(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }
}

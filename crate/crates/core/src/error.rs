//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated a precondition. `field` names the
    /// offending parameter.
    #[error("invalid parameter `{field}`: {reason}")]
    Param { field: &'static str, reason: String },

    /// A denoiser produced a non-finite value during a sampling chain.
    #[error("non-finite denoiser output at step t={t}, batch index {index}")]
    NonFinite { t: usize, index: usize },

    /// Training loss became non-finite.
    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },

    /// Conjugate gradient did not reach the requested tolerance.
    #[error("solver did not converge: relative residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    /// Dense factorization hit a non-positive pivot (system not SPD).
    #[error("matrix is not positive definite (pivot at row {row})")]
    NotPositiveDefinite { row: usize },

    /// Other numeric failure (e.g. a gradient check over threshold).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("pgm error: {0}")]
    Pgm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Param {
            field,
            reason: reason.into(),
        }
    }

    /// CLI exit code: 1 for validation/parameter errors, 2 for numeric or
    /// solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Param { .. }
            | Error::Config(_)
            | Error::Checkpoint(_)
            | Error::Pgm(_)
            | Error::Io(_) => 1,
            Error::NonFinite { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NoConvergence { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::Numeric(_) => 2,
        }
    }
}

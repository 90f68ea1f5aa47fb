use thiserror::Error;

use crate::symplectic::TraceRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("degenerate optimizer state: {0}")]
    DegenerateState(String),

    /// The integrator produced non-finite values. The trace up to the failing
    /// iteration is attached so callers can inspect what happened.
    #[error("optimizer diverged at iteration {iteration}; try a smaller h0")]
    Divergence {
        iteration: usize,
        trace: Vec<TraceRecord>,
    },

    #[error("power multiplier bracket failed on subcarrier {subcarrier}")]
    MultiplierBracket { subcarrier: usize },

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("subcarrier is undetectable: zero channel estimate and zero interference")]
    Undetectable,

    #[error("NMSE undefined for an all-zero reference channel")]
    UndefinedNmse,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

use thiserror::Error;

use crate::dual::PositivityViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid atom (w1={w1}, w2={w2}, mass={mass}): {reason}")]
    InvalidAtom {
        w1: f64,
        w2: f64,
        mass: f64,
        reason: &'static str,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("cannot sample from the zero measure")]
    EmptyMeasure,

    #[error(transparent)]
    Positivity(#[from] PositivityViolation),

    #[error("dual chain reached state {state}, beyond the table cap {cap}")]
    DualCapExceeded { state: usize, cap: usize },

    #[error("scaling family mismatch: {0}")]
    ScalingMismatch(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

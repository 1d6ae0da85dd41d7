use thiserror::Error;

use crate::trace::TraceError;

pub type Result<T, E = LfpsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LfpsError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("weights sum to {sum}, expected 1 within 1e-6")]
    WeightNormalization { sum: f64 },

    #[error("{what}: need more than {required} rows, have {available}")]
    InsufficientContext {
        what: &'static str,
        required: usize,
        available: usize,
    },

    #[error("query vector has zero norm")]
    ZeroNormQuery,

    #[error("index {index} outside [{lo}, {hi})")]
    IndexOutOfRange { index: usize, lo: usize, hi: usize },

    #[error("indices must be strictly increasing")]
    UnsortedIndices,

    #[error("invalid synthetic workload: {0}")]
    InvalidWorkload(String),

    #[error(transparent)]
    Trace(#[from] TraceError),

    #[error("step {step}, head {head}: {source}")]
    Step {
        step: usize,
        head: usize,
        #[source]
        source: Box<LfpsError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("report serialization: {0}")]
    Report(String),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(LfpsError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

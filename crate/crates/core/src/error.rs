use thiserror::Error;

use crate::consensus::ConvergenceLog;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("cannot split {n_views} views into {n_subsets} subsets")]
    TooManySubsets { n_views: usize, n_subsets: usize },

    #[error("{solver} did not converge after {iterations} iterations (last relative update {last_update:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        last_update: f64,
        last_iterate: Vec<f64>,
    },

    #[error("consensus iteration did not converge after {} outer iterations", .log.records.len())]
    ConsensusNotConverged {
        log: Box<ConvergenceLog>,
        last_iterate: Vec<f64>,
    },

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("problem too large for dense analysis: {size} > {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("malformed {format} file: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(expected: usize, actual: usize, context: &'static str) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            actual,
            context,
        })
    }
}

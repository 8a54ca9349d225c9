use thiserror::Error;

use crate::solvers::RunTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("epoch length lcm({m}, {n}) = {lcm} exceeds cap {cap}")]
    EpochTooLong { m: usize, n: usize, lcm: u128, cap: usize },

    #[error("order length {length} is not a multiple of {n_examples} examples")]
    Misaligned { length: usize, n_examples: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("ill-conditioned linear system at iteration {iteration} (residual {residual:e})")]
    IllConditioned { iteration: usize, residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(&'static str),

    #[error("run diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        trace: Box<RunTrace>,
    },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

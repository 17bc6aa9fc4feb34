use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid weight sequence: {0}")]
    InvalidWeights(String),
    #[error("weight sequence is not admissible: min_z (phi(z) - z) = {gap:e} > 0 (sum nu - 1 is {low_sign} at the small-c end and {high_sign} at the large-c end)")]
    NotAdmissible {
        gap: f64,
        low_sign: &'static str,
        high_sign: &'static str,
    },
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("fixed-point iteration diverged: {0}")]
    Divergence(String),
    #[error("truncation too small: {0}")]
    Truncation(String),
    #[error("transition masses sum to {sum} (state {state})")]
    Normalization { sum: f64, state: String },
    #[error("internal consistency check failed: {0}")]
    Consistency(String),
    #[error("step budget of {0} exhausted")]
    Budget(usize),
    #[error("indeterminate region: {0}")]
    Indeterminate(String),
    #[error("sequence is not critical: {0}")]
    NotCritical(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

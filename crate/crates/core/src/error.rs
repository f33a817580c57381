use thiserror::Error;

/// Errors surfaced by the lab's library operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },

    #[error("index {index} out of range [1, {d}]")]
    IndexOutOfRange { index: usize, d: usize },

    #[error("position {position} out of range [1, {n}]")]
    PositionOutOfRange { position: usize, n: usize },

    #[error("training set has {got} examples, expected {expected}")]
    WrongSampleCount { got: usize, expected: usize },

    #[error("{what} too large to enumerate ({size} > {limit}); {fallback}")]
    TooLargeToEnumerate {
        what: &'static str,
        size: u128,
        limit: u128,
        fallback: &'static str,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invariant violated{}: {detail}", seed.map(|s| format!(" (trial seed {s})")).unwrap_or_default())]
    InvariantViolation { seed: Option<u64>, detail: String },
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors raised anywhere in the smoothing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid basis specification: {0}")]
    InvalidBasis(String),

    #[error("value {value} at position {index} lies outside the domain [{min}, {max}]")]
    OutOfDomain {
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid penalty specification: {0}")]
    InvalidPenalty(String),

    #[error("eigen-decomposition of the order-{q} difference penalty found {found} null directions")]
    NullSpace { q: usize, found: usize },

    #[error("invalid response: {0}")]
    InvalidResponse(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("fixed-effects block is rank deficient: {0}")]
    RankDeficient(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("penalised IRLS failed: {0}")]
    Pirls(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("matrix is not symmetric (entry ({row}, {col}))")]
    NotSymmetric { row: usize, col: usize },
    #[error("rank-one update is singular (denominator {denominator:e})")]
    SingularUpdate { denominator: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("response {value} at row {row} is outside 1..={categories}")]
    CategoryOutOfRange { row: usize, value: i64, categories: usize },
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("thresholds are not strictly increasing at position {0}")]
    UnorderedThresholds(usize),
    #[error("category {0} has no observations; its cutpoint is not identifiable")]
    EmptyCategory(usize),
    #[error("design column {0} is constant; an intercept is confounded with the thresholds")]
    InterceptColumn(usize),
    #[error("observation {row} has leverage x'Vx = {leverage} too close to 1")]
    DegenerateLeverage { row: usize, leverage: f64 },
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("could not draw cutoffs leaving every category non-empty after {0} attempts")]
    DegenerateCutoffs(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

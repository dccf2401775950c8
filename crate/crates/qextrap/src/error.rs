//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by library operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A domain object violates one of its invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// Incompatible shapes (dimension, outcome, setting, or time counts).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation precondition is not met.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// No model of the chosen relaxation fits the data.
    #[error("infeasible data: {0}")]
    Infeasible(String),

    /// The conic solver failed or returned an unusable status.
    #[error("solver error: {0}")]
    Solver(String),

    /// The requested configuration is outside the supported scope.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A document could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by validation, numerical routines, and samplers.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a domain invariant (simplex sum, unit norm, orthant sign, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Vector or matrix dimensions do not match the operation's contract.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Location vector has (numerically) zero norm, so the orthonormal basis is undefined.
    #[error("degenerate location: {0}")]
    DegenerateLocation(String),

    /// A numerical routine failed to converge or produced a non-finite result.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The Monte Carlo orthant mass estimate was exactly zero; the truncated
    /// log-density is undefined at these parameters. Raise the draw count or
    /// flag the parameter region.
    #[error("truncation degenerate: {0}")]
    TruncationDegenerate(String),

    /// Rejection sampling did not reach the requested sample count within the
    /// proposal budget.
    #[error("rejection sampling exhausted: {0}")]
    RejectionExhausted(String),
}

pub type Result<T> = std::result::Result<T, Error>;

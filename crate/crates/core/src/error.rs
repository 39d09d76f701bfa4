//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A coefficient vector does not match the spectrum it is used with.
    #[error("dimension mismatch: spectrum has {expected} modes, vector has {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A constructor or operation precondition was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numeric evaluation produced a non-finite value.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A stored gap-sequence prefix is too short to satisfy a constraint.
    /// `binding` names the inequality that requires the largest rho.
    #[error("gap sequence exhausted: need rho >= {required_rho} ({binding}), prefix ends at {last_rho}")]
    ExtendSequence {
        required_rho: f64,
        binding: String,
        last_rho: f64,
    },

    /// The grid search for the next gap-sequence term hit its cap.
    #[error("no admissible rho_{{n+1}} within cap: n = {n}, searched up to {searched_up_to}")]
    NoAdmissibleRho { n: usize, searched_up_to: f64 },

    /// A bisection bracket could not be established.
    #[error("bracket failure in {context}: {detail}")]
    BracketFailure { context: String, detail: String },
}

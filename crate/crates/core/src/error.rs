use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("not a rotation: {0}")]
    NotARotation(String),

    #[error("invalid law specification: {0}")]
    InvalidLaw(String),

    #[error("no exact moments available for this law")]
    NoExactMoments,

    #[error("invalid disorder specification: {0}")]
    InvalidDisorder(String),

    #[error("Markov transition is not ergodic: {0}")]
    NotErgodic(String),

    #[error("series not certified: operator norm of the mean rotation is {rho} >= 1")]
    SeriesNotCertified { rho: f64 },

    #[error("operator does not leave the subspace invariant: leakage norm {leakage:.3e}")]
    SubspaceLeakage { leakage: f64 },

    #[error("no L2 density certified at horizon k = {k}: spectral sum diverges")]
    NoL2Density { k: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;

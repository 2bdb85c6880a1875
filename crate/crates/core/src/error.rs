//! Error type shared across the simulation and fitting modules.

use thiserror::Error;

/// Errors produced by construction, simulation, and fitting routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A matrix expected to be Hermitian is not, naming the offending pair.
    #[error("matrix is not Hermitian: entries ({i},{j}) and ({j},{i}) differ by {delta:.3e}")]
    NotHermitian { i: usize, j: usize, delta: f64 },

    /// A matrix or vector contains NaN or infinite entries.
    #[error("non-finite entry at ({i},{j})")]
    NonFinite { i: usize, j: usize },

    /// Dimension mismatch or unsupported dimension.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An iterative routine failed to converge.
    #[error("{what} did not converge: {detail}")]
    NoConvergence { what: String, detail: String },

    /// The fit problem is rank deficient along the reported direction.
    #[error("rank-deficient Jacobian; flat direction [{}]", fmt_vec(null_direction))]
    RankDeficient { null_direction: Vec<f64> },

    /// The data cannot determine the requested parameters.
    #[error("non-identifiable fit: {0}")]
    NonIdentifiable(String),

    /// Adiabatic label tracking lost a branch between two grid points.
    #[error("eigenvector tracking ambiguous on interval [{lo}, {hi}] (best overlap {overlap:.3})")]
    Tracking { lo: f64, hi: f64, overlap: f64 },

    /// A parameter violates its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Malformed measurement table or unit mismatch.
    #[error("table error: {0}")]
    Table(String),
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

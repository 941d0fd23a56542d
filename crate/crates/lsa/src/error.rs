//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong in an analysis or a simulation.
///
/// Numeric failure modes (`Diverged`, `SingularOperator`) are expected
/// outcomes for bad step sizes, not bugs; callers are expected to match on
/// them.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix or vector contains non-finite entries: {0}")]
    NonFinite(&'static str),

    #[error("operation requires a Hurwitz matrix, but the regime is {0:?}")]
    NotHurwitz(crate::spectral::Regime),

    #[error("operation requires a diagonalizable matrix (eigenvector condition number {kappa:.3e} exceeds threshold)")]
    Defective { kappa: f64 },

    #[error("operation requires min Re(lambda) >= 0, but the matrix is unstable (spectral gap {gap:.3e})")]
    UnstableRegime { gap: f64 },

    #[error("iterate diverged at step {step}: |theta| = {norm:.3e} exceeded the overflow guard {guard:.1e}")]
    Diverged { step: usize, norm: f64, guard: f64 },

    #[error("the d^2 x d^2 covariance operator is singular or near-singular (reciprocal condition {rcond:.3e}); the step size is at or over the stability threshold")]
    SingularOperator { rcond: f64 },

    #[error("the transition matrix has no unique stationary distribution (eigenvalue-1 multiplicity {multiplicity})")]
    NonErgodic { multiplicity: usize },

    #[error("payoff matrix violates the convex-concave conditions: {0}")]
    NotConvexConcave(String),

    #[error("trajectory was recorded without the diagnostics needed for this computation")]
    MissingDiagnostics,

    #[error("oracle does not certify the almost-sure l-infinity contraction contract")]
    ContractNotCertified,

    #[error("momentum parameter alpha = {alpha} is within tolerance of the excluded value 2*sqrt(lambda_{index}) - eta*lambda_{index}")]
    ExcludedAlpha { alpha: f64, index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix expected to be PSD has eigenvalue {min_eig:.3e} below the repair tolerance")]
    NotPositiveSemidefinite { min_eig: f64 },

    #[error("Schur iteration failed to converge")]
    SchurFailed,

    #[error("the drift matrix is singular: theta* is not available")]
    SingularDrift,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

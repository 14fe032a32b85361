//! Error taxonomy shared across the crate.
//!
//! Numerical failure modes are deliberately fine-grained: callers such as the
//! sweep driver downgrade some of them (a non-injective state at one grid
//! point should not abort a whole sweep) while treating others (config
//! parse errors) as fatal.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input matrices fail a structural precondition (shape mismatch,
    /// non-Hermitian where Hermitian is required, non-finite entries, ...).
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    /// The dense nonsymmetric eigensolver failed or produced a
    /// decomposition that does not reproduce its input.
    #[error("eigendecomposition failed for {dim}x{dim} matrix (lapack info {info}, reconstruction residual {residual:?})")]
    EigFailed {
        dim: usize,
        info: i32,
        residual: Option<f64>,
    },

    /// The transfer generator has a (near-)degenerate dominant eigenvalue,
    /// so the stationary state is not unique and the state is not injective.
    #[error("non-injective state: {0}")]
    NonInjectiveState(String),

    /// The dominant transfer eigenvalue is too far from zero, meaning the
    /// auxiliary matrices do not satisfy the left-gauge constraint.
    #[error("gauge violation: dominant transfer eigenvalue has real part {lambda_re:e}")]
    GaugeViolation { lambda_re: f64 },

    /// A singular or badly conditioned linear system was encountered.
    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),

    /// An expectation value that must be real came out with a large
    /// imaginary part, indicating a corrupted state or broken contraction.
    #[error("observable has non-negligible imaginary part {imag:e} (tolerance {tol:e})")]
    NonRealObservable { imag: f64, tol: f64 },

    /// The chemical-potential search could not reach the requested particle
    /// densities.
    #[error("density targeting failed: {0}")]
    DensityTargetError(String),

    /// The Bethe-ansatz integral-equation solver failed to converge.
    #[error("Bethe oracle failed at gamma={gamma}: {message}")]
    OracleError { gamma: f64, message: String },

    /// One or more points of an energy-surface stencil failed to converge.
    #[error("energy stencil incomplete: {0}")]
    StencilError(String),

    /// A sound-velocity scan found no sign change in the probed window.
    #[error("no transition found in scanned range: {0}")]
    NoTransitionInRange(String),

    /// Config-file problems, with a 1-based line number when one applies.
    #[error("config error{}: {message}", .line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("checkpoint/serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

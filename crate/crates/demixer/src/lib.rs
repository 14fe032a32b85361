//! Variational simulator for one-dimensional bosonic quantum field theories
//! built on translation-invariant continuous matrix product states, aimed at
//! the mixing/demixing transition of a symmetric two-species repulsive Bose
//! gas, together with an independent Bethe-ansatz reference for the
//! single-species integrable limit.
//!
//! Module map:
//! * [`linalg`] — dense complex kernels (matmul, Kronecker, LU, eig,
//!   stationary fixed points of transfer generators).
//! * [`cmps`] — variational state parametrizations, gauge-fixed assembly of
//!   auxiliary generators, transfer operators, checkpoint (de)serialization.
//! * [`observables`] — densities, energy terms, local fluctuations and
//!   two-point correlation curves from a converged state.
//! * [`bethe`] — Lieb-Liniger ground-state oracle (dimensionless energy,
//!   its derivatives, sound velocity, Luttinger parameter).
//! * [`optimize`] — energy functional, analytic gradient, L-BFGS
//!   minimization with chemical-potential targeting of densities.
//! * [`luttinger`] — energy-surface stencils, sound velocities of the
//!   symmetric/antisymmetric modes, weak-coupling estimates, transition
//!   location, demixed-phase diagnostics.
//! * [`sweep`] — config-driven batch runs (coupling sweeps, correlation and
//!   velocity scans) with deterministic CSV/JSON artifacts and resumable
//!   checkpoints.

pub mod bethe;
pub mod cmps;
pub mod error;
pub mod linalg;
pub mod observables;
pub mod luttinger;
pub mod optimize;
pub mod sweep;

pub use error::{Error, Result};

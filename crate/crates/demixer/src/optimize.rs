//! Ground-state search over the variational manifold.
//!
//! The energy density of a translation-invariant state is a smooth function
//! of the raw parameter matrices, so the ground state at fixed chemical
//! potentials is found by quasi-Newton descent on the grand-canonical
//! objective
//!
//! ```text
//!     F(θ; μ) = e0(θ) − Σ_α μ_α ρ_α(θ),
//! ```
//!
//! and the physical point at *fixed densities* is found by an outer secant
//! iteration on μ.  Three ingredients keep every descent step cheap:
//!
//! * **Deflated fixed-point solve.**  The stationary density matrix `r`
//!   (`T(r) = 0`, `Tr r = 1`) is the solution of one LU-factored linear
//!   system `(T + κ·vec(I)vec(I)ᵀ)·vec(r) = κ·vec(I)`: projecting the
//!   equation onto the exact left null row `vec(I)ᵀ` of the gauged transfer
//!   generator shows `Tr r = 1` is automatic and the added rank-one term
//!   then annihilates itself.  No eigendecomposition is needed during
//!   optimization.
//! * **Adjoint gradient.**  Differentiating `F` subject to `T(r) = 0` with a
//!   Lagrange multiplier matrix `y` (the solution of the transposed system,
//!   which reuses the *same* LU factorization) yields the exact analytic
//!   gradient at the cost of roughly one extra matrix contraction per
//!   parameter block.  A central finite-difference fallback (with a warning
//!   flag) covers the rare case where the adjoint solve fails.
//! * **Limited-memory BFGS** with backtracking Armijo line search.  All
//!   arithmetic is deterministic and single-threaded, so trajectories are
//!   bit-identical for identical seeds and configurations.
//!
//! Degenerate (reducible) candidate states make the deflated system singular
//! or leave a large stationarity residual; such points evaluate to a large
//! penalty with a flag so the line search backs away from them instead of
//! aborting the run.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bethe;
use crate::cmps::{transfer_generator, AssembledState, CmpsPair, CmpsParams, CmpsSingle, StateShape};
use crate::error::{Error, Result};
use crate::linalg::{
    adjoint, frob_norm, hermitize, identity, lu_factor, matmul, matmul3, trace, unvec_rm, vec_rm,
    C64, CMat, LuFactors,
};
use crate::observables::{measure, FieldParams, ObservableSet};

/// Objective value assigned to states whose stationary structure is
/// degenerate (non-injective).  Large compared to any physical energy
/// density in the regimes of interest, and constant, so the line search
/// simply rejects steps that land there.
pub const PENALTY_VALUE: f64 = 1e6;

/// Relative stationarity residual `‖T·vec(r)‖/‖T‖` above which the deflated
/// solve is considered to have produced garbage (near-degenerate dominant
/// subspace) and the penalty path is taken.
const DEGENERACY_RESIDUAL_TOL: f64 = 1e-8;

/// Maximum outer chemical-potential updates before density targeting is
/// declared failed.
const MU_OUTER_MAX: usize = 40;
/// Total inner-iteration budget of one density-targeting run, as a multiple
/// of the per-round cap `max_iters`.
const TOTAL_ITERS_FACTOR: usize = 8;

const LBFGS_MEMORY: usize = 20;
const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 45;
/// Curvature pairs with `s·y ≤ CURVATURE_SKIP_REL·‖s‖‖y‖` are discarded.
const CURVATURE_SKIP_REL: f64 = 1e-10;
/// A descent that stalls at the numerical floor of the objective (the line
/// search cannot decrease `f` along steepest descent at any representable
/// step) is accepted as converged when the gradient norm is within this
/// factor of the requested tolerance.  Near an ill-conditioned optimum the
/// value converges to machine precision while the gradient norm plateaus a
/// couple of orders above the tolerance; insisting on the full tolerance
/// there burns thousands of futile backtracking probes.
const STALL_GNORM_FACTOR: f64 = 200.0;

// ---------------------------------------------------------------------------
// Configuration and result types
// ---------------------------------------------------------------------------

/// Knobs for the ground-state search.  All fields must be positive and
/// `mu_tol < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Convergence threshold on the Euclidean norm of the packed gradient.
    pub grad_tol: f64,
    /// Iteration budget per inner quasi-Newton run.
    pub max_iters: usize,
    /// Number of independently seeded starts; the best result is kept.
    pub restarts: usize,
    /// Base RNG seed; restart `k` uses a deterministic function of `(seed, k)`.
    pub seed: u64,
    /// Amplitude of the random perturbations in the initial state.
    pub init_scale: f64,
    /// Relative tolerance on `|ρ_α − target_α| / target_α`.
    pub mu_tol: f64,
    /// Step for the central finite-difference gradient fallback.
    pub fd_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            grad_tol: 1e-6,
            max_iters: 2000,
            restarts: 5,
            seed: 7,
            init_scale: 0.2,
            mu_tol: 1e-3,
            fd_step: 1e-5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameters(format!("optimizer config: {what}")));
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return bad("grad_tol must be positive and finite");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be positive and finite");
        }
        if !(self.mu_tol > 0.0 && self.mu_tol < 1.0) {
            return bad("mu_tol must lie in (0, 1)");
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return bad("fd_step must be positive and finite");
        }
        Ok(())
    }
}

/// Outcome of a ground-state search at fixed target densities.
#[derive(Debug, Clone)]
pub struct GroundStateResult {
    /// Converged (or best-found) state; raw parameters via [`AssembledState::source`].
    pub state: AssembledState,
    /// Full observable set measured on the final state.
    pub observables: ObservableSet,
    /// Chemical potentials (one per species) at the final descent.
    pub mu: Vec<f64>,
    /// Euclidean norm of the packed gradient at the final iterate.
    pub grad_norm: f64,
    /// True when the gradient norm reached `grad_tol` *and* every density
    /// matched its target within `mu_tol` *and* the state is injective.
    pub converged: bool,
    /// Total accepted quasi-Newton steps across all μ rounds.
    pub iterations: usize,
    /// Seed that produced the initial state (for reproducing this run).
    pub seed_used: u64,
}

/// Objective evaluation at fixed parameters and chemical potentials.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    /// Grand-canonical objective `e0 − Σ μ_α ρ_α` (or [`PENALTY_VALUE`]).
    pub value: f64,
    /// Energy density (NaN on the penalty path).
    pub e0: f64,
    /// Particle densities per species (zeros on the penalty path).
    pub rho: Vec<f64>,
    /// True when the state was flagged non-injective and the penalty was
    /// returned instead of a physical value.
    pub penalized: bool,
}

/// Gradient evaluation; `value` matches [`ObjectiveEval::value`].
#[derive(Debug, Clone)]
pub struct GradientEval {
    pub value: f64,
    /// Derivatives with respect to the packed real parameter vector, in the
    /// exact layout of [`CmpsParams::pack`].
    pub grad: Vec<f64>,
    pub penalized: bool,
    /// True when the analytic adjoint path failed and central finite
    /// differences were used instead.
    pub used_fd: bool,
}

// ---------------------------------------------------------------------------
// Fast stationary solve (no eigendecomposition)
// ---------------------------------------------------------------------------

/// Stationary data obtained from the deflated linear solve.
struct FastStationary {
    r: CMat,
    lu: LuFactors,
}

fn build_deflated(t: &CMat, dtil: usize, kappa: f64) -> CMat {
    let mut a = t.clone();
    for i in 0..dtil {
        for j in 0..dtil {
            a[(i * dtil + i, j * dtil + j)] += C64::new(kappa, 0.0);
        }
    }
    a
}

/// Solve for the stationary right density matrix of the gauged transfer
/// generator via one LU factorization.  Errors with `NonInjectiveState`
/// when the dominant subspace is (near-)degenerate.
fn fast_stationary(a: &AssembledState) -> Result<FastStationary> {
    let dtil = a.dtil;
    let n = dtil * dtil;
    let tg = transfer_generator(a);
    let t = tg.t;
    let t_norm = frob_norm(&t);
    // κ balances the rank-one deflation against the generator's own scale;
    // the floor keeps the all-zero corner case (vacuum at D = 1) solvable.
    let kappa = (t_norm / dtil as f64).max(1e-30);
    let deflated = build_deflated(&t, dtil, kappa);
    let lu = lu_factor(&deflated).map_err(|e| {
        Error::NonInjectiveState(format!(
            "deflated fixed-point system is singular (degenerate stationary subspace): {e}"
        ))
    })?;
    let mut rhs = ndarray::Array1::<C64>::zeros(n);
    for i in 0..dtil {
        rhs[i * dtil + i] = C64::new(kappa, 0.0);
    }
    let x = lu.solve_vec(&rhs)?;
    let mut r = hermitize(&unvec_rm(&x, dtil));
    let tr = trace(&r).re;
    if !(tr.is_finite() && tr.abs() > 1e-12) {
        return Err(Error::NonInjectiveState(format!(
            "stationary solve returned trace {tr:e}"
        )));
    }
    r.mapv_inplace(|z| z / tr);
    // Residual check: a clean simple zero mode reproduces T(r) = 0 to
    // solver precision; a near-degenerate pair leaves an O(gap) residue.
    let tv = t.dot(&vec_rm(&r));
    let res = tv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / t_norm.max(1e-30);
    if !res.is_finite() || res > DEGENERACY_RESIDUAL_TOL {
        return Err(Error::NonInjectiveState(format!(
            "stationarity residual {res:.3e} exceeds {DEGENERACY_RESIDUAL_TOL:.1e} \
             (near-degenerate dominant subspace)"
        )));
    }
    Ok(FastStationary { r, lu })
}

// ---------------------------------------------------------------------------
// Objective contractions (left weight = identity in the gauged frame)
// ---------------------------------------------------------------------------

/// Frobenius inner product `Σ_ij conj(a_ij)·b_ij = Tr[a†·b]`.
fn frob_inner(a: &CMat, b: &CMat) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// `Tr[A·r·A†]` with the identity as left weight.
fn expval(op: &CMat, r: &CMat) -> f64 {
    frob_inner(op, &matmul(op, r)).re
}

struct Contractions {
    value: f64,
    e0: f64,
    rho: Vec<f64>,
    /// Commutators `C_α = [Q, R_α]` (reused by the gradient).
    cs: Vec<CMat>,
    /// `R̃_1·R̃_2` for two species (reused by the gradient).
    r12: Option<CMat>,
}

fn contract_objective(a: &AssembledState, p: &FieldParams, mu: &[f64], r: &CMat) -> Contractions {
    let species = a.rs.len();
    let mut rho = Vec::with_capacity(species);
    let mut cs = Vec::with_capacity(species);
    let mut e0 = 0.0;
    for r_op in &a.rs {
        let c_op = &matmul(&a.q, r_op) - &matmul(r_op, &a.q);
        rho.push(expval(r_op, r));
        e0 += expval(&c_op, r);
        e0 += p.c * expval(&matmul(r_op, r_op), r);
        cs.push(c_op);
    }
    let r12 = if species == 2 {
        let prod = matmul(&a.rs[0], &a.rs[1]);
        e0 += p.g * expval(&prod, r);
        Some(prod)
    } else {
        None
    };
    let value = e0 - mu.iter().zip(&rho).map(|(m, d)| m * d).sum::<f64>();
    Contractions {
        value,
        e0,
        rho,
        cs,
        r12,
    }
}

// ---------------------------------------------------------------------------
// Analytic gradient (adjoint method)
// ---------------------------------------------------------------------------

/// Partial trace over the second tensor factor:
/// `out_{ac} = Σ_b m_{(a·d+b),(c·d+b)}`.
fn ptrace_second(m: &CMat, d: usize) -> CMat {
    let mut out = CMat::zeros((d, d));
    for a in 0..d {
        for c in 0..d {
            let mut s = C64::new(0.0, 0.0);
            for b in 0..d {
                s += m[(a * d + b, c * d + b)];
            }
            out[(a, c)] = s;
        }
    }
    out
}

/// Partial trace over the first tensor factor:
/// `out_{bd} = Σ_a m_{(a·d+b),(a·d+d)}`.
fn ptrace_first(m: &CMat, d: usize) -> CMat {
    let mut out = CMat::zeros((d, d));
    for b in 0..d {
        for dd in 0..d {
            let mut s = C64::new(0.0, 0.0);
            for a in 0..d {
                s += m[(a * d + b, a * d + dd)];
            }
            out[(b, dd)] = s;
        }
    }
    out
}

/// Contract the second tensor factor against `conj(w)`:
/// `out_{ac} = Σ_{b,d} m_{(a·d+b),(c·d+d)}·conj(w_{bd})`.
///
/// This is the chain rule for a Kronecker direction `dX ⊗ w`:
/// `Re Tr[Ω†·(dX ⊗ w)] = Re Tr[out†·dX]`.
fn contract_second(m: &CMat, w: &CMat, d: usize) -> CMat {
    let mut out = CMat::zeros((d, d));
    for a in 0..d {
        for c in 0..d {
            let mut s = C64::new(0.0, 0.0);
            for b in 0..d {
                for dd in 0..d {
                    s += m[(a * d + b, c * d + dd)] * w[(b, dd)].conj();
                }
            }
            out[(a, c)] = s;
        }
    }
    out
}

/// Contract the first tensor factor against `conj(w)`:
/// `out_{bd} = Σ_{a,c} m_{(a·d+b),(c·d+d)}·conj(w_{ac})`.
fn contract_first(m: &CMat, w: &CMat, d: usize) -> CMat {
    let mut out = CMat::zeros((d, d));
    for b in 0..d {
        for dd in 0..d {
            let mut s = C64::new(0.0, 0.0);
            for a in 0..d {
                for c in 0..d {
                    s += m[(a * d + b, c * d + dd)] * w[(a, c)].conj();
                }
            }
            out[(b, dd)] = s;
        }
    }
    out
}

/// Fold a complex gradient matrix `Ω` (convention `dF = Re Tr[Ω†·dM]`) into
/// the packed layout of a Hermitian parameter block.
fn fold_hermitian(omega: &CMat, out: &mut Vec<f64>) {
    let d = omega.nrows();
    let s = &adjoint(omega) + omega;
    for i in 0..d {
        for j in i..d {
            if i == j {
                out.push(0.5 * s[(i, i)].re);
            } else {
                out.push(s[(i, j)].re);
                out.push(s[(i, j)].im);
            }
        }
    }
}

/// Fold a complex gradient matrix into the packed layout of a free block.
fn fold_free(omega: &CMat, out: &mut Vec<f64>) {
    for z in omega.iter() {
        out.push(z.re);
        out.push(z.im);
    }
}

/// Exact gradient of the grand-canonical objective with respect to the
/// packed parameters, via the adjoint (Lagrange-multiplier) method.
///
/// The multiplier `y` solves the transposed stationary system with the
/// right-hand side projected onto the range of the transfer generator;
/// the same LU factorization as the `r` solve is reused with a transposed
/// triangular sweep.  `y` is defined up to a real multiple of the identity,
/// which cancels in the folded gradient because the gauge identity
/// `Q + Q† + Σ R†R = 0` holds identically in the parameters.
fn analytic_gradient(
    a: &AssembledState,
    p: &FieldParams,
    mu: &[f64],
    fast: &FastStationary,
    con: &Contractions,
) -> Result<Vec<f64>> {
    let dtil = a.dtil;
    let species = a.rs.len();
    let r = &fast.r;
    let eye = identity(dtil);

    // Left variation F_l = Ẽ(I): the adjoint of the energy superoperator
    // applied to the identity.
    let mut f_l = CMat::zeros((dtil, dtil));
    for (alpha, r_op) in a.rs.iter().enumerate() {
        let c_op = &con.cs[alpha];
        f_l = &f_l + &matmul(&adjoint(c_op), c_op);
        let r2 = matmul(r_op, r_op);
        f_l = &f_l + &matmul(&adjoint(&r2), &r2).mapv(|z| z * p.c);
        f_l = &f_l - &matmul(&adjoint(r_op), r_op).mapv(|z| z * mu[alpha]);
    }
    if let Some(r12) = &con.r12 {
        f_l = &f_l + &matmul(&adjoint(r12), r12).mapv(|z| z * p.g);
    }
    // Project out the component paired with the kernel of the transfer
    // generator so the adjoint system is solvable.
    let shift = trace(&matmul(&f_l, r)).re;
    let pfl = &f_l - &eye.mapv(|z| z * shift);

    // Adjoint solve: Tᵀ·vec(conj(y)) = vec(conj(P(F_l))), deflated by the
    // same rank-one term (its transpose deflates the transposed kernel).
    let b = vec_rm(&pfl.mapv(|z| z.conj()));
    let eta = fast.lu.solve_vec_transposed(&b)?;
    let y = hermitize(&unvec_rm(&eta, dtil).mapv(|z| z.conj()));

    // Accumulate Ω matrices in the convention dF = Re Tr[Ω†·dM] for each
    // assembled matrix M.
    let yr = matmul(&y, r);
    let mut omega_q = yr.mapv(|z| z * -2.0);
    for (alpha, r_op) in a.rs.iter().enumerate() {
        let cr = matmul(&con.cs[alpha], r);
        let t1 = matmul(&cr, &adjoint(r_op));
        let t2 = matmul(&adjoint(r_op), &cr);
        omega_q = &omega_q + &(&t1 - &t2).mapv(|z| z * 2.0);
    }

    let qdag = adjoint(&a.q);
    let mut omega_rs: Vec<CMat> = Vec::with_capacity(species);
    for (alpha, r_op) in a.rs.iter().enumerate() {
        let cr = matmul(&con.cs[alpha], r);
        // Kinetic: 2[Q†, C_α r].
        let mut om = (&matmul(&qdag, &cr) - &matmul(&cr, &qdag)).mapv(|z| z * 2.0);
        // Intra-species repulsion: 2c(R² r R† + R† R² r).
        let r2 = matmul(r_op, r_op);
        let r2r = matmul(&r2, r);
        om = &om + &(&matmul(&r2r, &adjoint(r_op)) + &matmul3(&adjoint(r_op), &r2, r)).mapv(|z| z * (2.0 * p.c));
        // Chemical potential: −2μ R r.
        om = &om - &matmul(r_op, r).mapv(|z| z * (2.0 * mu[alpha]));
        // Stationarity back-reaction: −2 y R r.
        om = &om - &matmul3(&y, r_op, r).mapv(|z| z * 2.0);
        omega_rs.push(om);
    }
    if let Some(r12) = &con.r12 {
        // Inter-species repulsion: 2g·R̃1R̃2 r R̃2† and 2g·R̃1†R̃1R̃2 r.
        let r12r = matmul(r12, r);
        omega_rs[0] = &omega_rs[0] + &matmul(&r12r, &adjoint(&a.rs[1])).mapv(|z| z * (2.0 * p.g));
        omega_rs[1] = &omega_rs[1] + &matmul(&adjoint(&a.rs[0]), &r12r).mapv(|z| z * (2.0 * p.g));
    }

    // Fold the Q dependence into its constituents: Q = −iK̃ − ½Σ R̃†R̃ gives
    // Ω_K̃ = i·Ω_Q and Ω_R̃α += −½ R̃_α (Ω_Q + Ω_Q†).
    let omega_k_til = omega_q.mapv(|z| z * C64::new(0.0, 1.0));
    let om_q_sym = &omega_q + &adjoint(&omega_q);
    for (r_op, om) in a.rs.iter().zip(omega_rs.iter_mut()) {
        *om = &*om - &matmul(r_op, &om_q_sym).mapv(|z| z * 0.5);
    }

    // Chain to the raw parameter blocks and fold into the packed layout.
    let mut grad = Vec::with_capacity(a.source().shape().packed_len());
    match a.source() {
        CmpsParams::Single(_) => {
            fold_hermitian(&omega_k_til, &mut grad);
            fold_free(&omega_rs[0], &mut grad);
        }
        CmpsParams::Pair(pair) => {
            let d = pair.d;
            fold_hermitian(&ptrace_second(&omega_k_til, d), &mut grad);
            fold_hermitian(&ptrace_first(&omega_k_til, d), &mut grad);
            fold_free(&ptrace_second(&omega_rs[0], d), &mut grad);
            fold_free(&ptrace_first(&omega_rs[1], d), &mut grad);
            for ch in 0..pair.p {
                fold_hermitian(&contract_second(&omega_k_til, &pair.z2[ch], d), &mut grad);
                fold_hermitian(&contract_first(&omega_k_til, &pair.z1[ch], d), &mut grad);
            }
        }
    }
    debug_assert_eq!(grad.len(), a.source().shape().packed_len());
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Core evaluation (objective, optional gradient, FD fallback)
// ---------------------------------------------------------------------------

struct CoreEval {
    value: f64,
    e0: f64,
    rho: Vec<f64>,
    grad: Option<Vec<f64>>,
    penalized: bool,
    used_fd: bool,
}

/// Quadratic density restraint `Σ_α w_α (ρ_α − target_α)²` added to the
/// grand-canonical objective by the augmented-Lagrangian density-targeting
/// loop.  It regularizes directions along which the density responds
/// violently (or not at all) to the chemical potentials — in particular the
/// near-flat density-difference mode of the demixed phase, where a species
/// can otherwise empty out completely (`R_α = 0` is exactly stationary, so
/// a collapsed species is unrecoverable by any later μ adjustment).
///
/// Because the objective gradient is affine in μ, the restrained gradient
/// is the plain machinery evaluated at the effective chemical potentials
/// `μ_α − 2 w_α (ρ_α − target_α)`.
#[derive(Debug, Clone)]
struct DensityPenalty {
    w: Vec<f64>,
    target: Vec<f64>,
}

impl DensityPenalty {
    fn value(&self, rho: &[f64]) -> f64 {
        self.w
            .iter()
            .zip(&self.target)
            .zip(rho)
            .map(|((w, t), r)| w * (r - t) * (r - t))
            .sum()
    }

    fn mu_effective(&self, mu: &[f64], rho: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(&self.w)
            .zip(&self.target)
            .zip(rho)
            .map(|(((m, w), t), r)| m - 2.0 * w * (r - t))
            .collect()
    }
}

fn penalty_eval(params: &CmpsParams, want_grad: bool) -> CoreEval {
    let species = params.species_count();
    CoreEval {
        value: PENALTY_VALUE,
        e0: f64::NAN,
        rho: vec![0.0; species],
        grad: if want_grad {
            Some(vec![0.0; params.shape().packed_len()])
        } else {
            None
        },
        penalized: true,
        used_fd: false,
    }
}

fn eval_core(
    params: &CmpsParams,
    p: &FieldParams,
    mu: &[f64],
    pen: Option<&DensityPenalty>,
    want_grad: bool,
    fd_step: f64,
) -> Result<CoreEval> {
    let species = params.species_count();
    p.validate(species)?;
    if mu.len() != species {
        return Err(Error::InvalidParameters(format!(
            "{} chemical potentials supplied for {} species",
            mu.len(),
            species
        )));
    }
    let a = params.assemble()?;
    let fast = match fast_stationary(&a) {
        Ok(f) => f,
        Err(Error::NonInjectiveState(_)) | Err(Error::LinearSolveFailed(_)) => {
            return Ok(penalty_eval(params, want_grad));
        }
        Err(e) => return Err(e),
    };
    let con = contract_objective(&a, p, mu, &fast.r);
    let value = con.value + pen.map_or(0.0, |q| q.value(&con.rho));
    if !value.is_finite() {
        return Ok(penalty_eval(params, want_grad));
    }
    let mut used_fd = false;
    let grad = if want_grad {
        // The gradient is affine in μ, so the density restraint folds into
        // effective chemical potentials evaluated at the current densities.
        let mu_g = pen.map_or_else(|| mu.to_vec(), |q| q.mu_effective(mu, &con.rho));
        match analytic_gradient(&a, p, &mu_g, &fast, &con) {
            Ok(g) => Some(g),
            Err(err) => {
                eprintln!(
                    "warning: adjoint gradient solve failed ({err}); \
                     falling back to central finite differences"
                );
                used_fd = true;
                Some(fd_gradient_core(params, p, mu, pen, fd_step)?)
            }
        }
    } else {
        None
    };
    Ok(CoreEval {
        value,
        e0: con.e0,
        rho: con.rho,
        grad,
        penalized: false,
        used_fd,
    })
}

fn fd_gradient_core(
    params: &CmpsParams,
    p: &FieldParams,
    mu: &[f64],
    pen: Option<&DensityPenalty>,
    step: f64,
) -> Result<Vec<f64>> {
    let shape = params.shape();
    let x0 = params.pack();
    let mut grad = Vec::with_capacity(x0.len());
    let mut x = x0.clone();
    for i in 0..x0.len() {
        x[i] = x0[i] + step;
        let fp = eval_core(&shape.unpack(&x)?, p, mu, pen, false, step)?.value;
        x[i] = x0[i] - step;
        let fm = eval_core(&shape.unpack(&x)?, p, mu, pen, false, step)?.value;
        x[i] = x0[i];
        grad.push((fp - fm) / (2.0 * step));
    }
    Ok(grad)
}

/// Grand-canonical objective `e0 − Σ μ_α ρ_α` at fixed parameters.
/// Non-injective states return [`PENALTY_VALUE`] with `penalized = true`.
pub fn objective(params: &CmpsParams, p: &FieldParams, mu: &[f64]) -> Result<ObjectiveEval> {
    let ev = eval_core(params, p, mu, None, false, 1e-5)?;
    Ok(ObjectiveEval {
        value: ev.value,
        e0: ev.e0,
        rho: ev.rho,
        penalized: ev.penalized,
    })
}

/// Exact analytic gradient of the objective with respect to the packed
/// parameters; falls back to central finite differences (step `fd_step`)
/// with `used_fd = true` when the adjoint linear solve fails.
pub fn gradient(
    params: &CmpsParams,
    p: &FieldParams,
    mu: &[f64],
    fd_step: f64,
) -> Result<GradientEval> {
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(Error::InvalidParameters(
            "fd_step must be positive and finite".into(),
        ));
    }
    let ev = eval_core(params, p, mu, None, true, fd_step)?;
    Ok(GradientEval {
        value: ev.value,
        grad: ev.grad.expect("gradient requested"),
        penalized: ev.penalized,
        used_fd: ev.used_fd,
    })
}

/// Draw a random parameter point of the given shape: Hermitian auxiliary
/// blocks plus field blocks near the density-matched identity, with noise
/// amplitude `scale`.  Deterministic in `seed`.  This is the optimizer's
/// own initial-state distribution, exposed for experiments and for
/// randomized validation of the objective and gradient.
pub fn random_params(
    shape: StateShape,
    p: &FieldParams,
    scale: f64,
    seed: u64,
) -> Result<CmpsParams> {
    p.validate(shape.species_count())?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameters(
            "noise scale must be positive and finite".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_params(shape, p, scale, &mut rng))
}

/// Central finite-difference gradient of the objective (reference
/// implementation for validating the analytic gradient).
pub fn fd_gradient(params: &CmpsParams, p: &FieldParams, mu: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameters(
            "finite-difference step must be positive and finite".into(),
        ));
    }
    let species = params.species_count();
    p.validate(species)?;
    if mu.len() != species {
        return Err(Error::InvalidParameters(format!(
            "{} chemical potentials supplied for {} species",
            mu.len(),
            species
        )));
    }
    fd_gradient_core(params, p, mu, None, step)
}

// ---------------------------------------------------------------------------
// Limited-memory BFGS
// ---------------------------------------------------------------------------

pub(crate) struct LbfgsReport {
    pub x: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The line search failed along steepest descent: the objective is at
    /// its numerical floor and no further decrease is representable.
    pub stalled: bool,
    /// At the stall, the recent value progress was already below the noise
    /// floor — the minimum is resolved in value even though the gradient
    /// norm may sit above tolerance (ill-conditioned flat directions).
    pub value_flat: bool,
    /// Objective value at the start plus after every accepted step.
    #[cfg_attr(not(test), allow(dead_code))]
    pub values: Vec<f64>,
}

impl LbfgsReport {
    /// Converged to tolerance, or stalled at the numerical floor of the
    /// value (see [`STALL_GNORM_FACTOR`] and [`LbfgsReport::value_flat`]).
    pub fn converged_or_stalled(&self, grad_tol: f64) -> bool {
        self.converged
            || (self.stalled
                && (self.value_flat || self.grad_norm <= STALL_GNORM_FACTOR * grad_tol))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    if hist.is_empty() {
        return q;
    }
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, yv, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(yv) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let (s_last, y_last, _) = hist.back().expect("nonempty history");
    let gamma = dot(s_last, y_last) / dot(y_last, y_last).max(1e-300);
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for ((s, yv, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(yv, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

/// Minimize a smooth function with L-BFGS (memory 10) and a backtracking
/// Armijo line search.  Fully deterministic: no randomness, fixed
/// evaluation order.  `value_grad` is called at accepted iterates,
/// `value_only` at line-search probes.
pub(crate) fn lbfgs<FG, FO>(
    x0: &[f64],
    grad_tol: f64,
    max_iters: usize,
    mut value_grad: FG,
    mut value_only: FO,
) -> LbfgsReport
where
    FG: FnMut(&[f64]) -> (f64, Vec<f64>),
    FO: FnMut(&[f64]) -> f64,
{
    let trace = std::env::var_os("DEMIXER_TRACE_LBFGS").is_some();
    let mut evals = 0usize;
    let mut x = x0.to_vec();
    let (mut f, mut g) = value_grad(&x);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut values = vec![f];
    let mut iterations = 0usize;
    let mut converged = false;
    let mut stalled = false;

    for _round in 0..max_iters {
        if trace && iterations % 250 == 0 {
            eprintln!(
                "  lbfgs iter {iterations}: f={f:.10} gnorm={:.3e} probes={evals}",
                norm(&g)
            );
        }
        let gnorm = norm(&g);
        if gnorm <= grad_tol {
            converged = true;
            break;
        }
        let mut d = two_loop(&g, &hist);
        for v in d.iter_mut() {
            *v = -*v;
        }
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) || d.iter().any(|v| !v.is_finite()) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            dg = -gnorm * gnorm;
        }
        let mut alpha = if hist.is_empty() {
            (1.0 / gnorm.max(1e-12)).min(1.0)
        } else {
            1.0
        };
        // Backtracking line search.  The first probe (full step) is the
        // common accept, so it evaluates value and gradient together.
        // Probing stops once the trial step can no longer change `x` in
        // floating point — continuing would only burn evaluations.
        let d_inf = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let x_inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        for bt in 0..MAX_BACKTRACKS {
            if alpha * d_inf < 1e-14 * (1.0 + x_inf) {
                break;
            }
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            evals += 1;
            if bt == 0 {
                let (ft, gt) = value_grad(&xt);
                if ft <= f + ARMIJO_C1 * alpha * dg {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            } else {
                let ft = value_only(&xt);
                if ft <= f + ARMIJO_C1 * alpha * dg {
                    let (ft2, gt) = value_grad(&xt);
                    accepted = Some((xt, ft2, gt));
                    break;
                }
            }
            alpha *= BACKTRACK_SHRINK;
        }
        match accepted {
            Some((x_new, f_new, g_new)) => {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &yv);
                if sy > CURVATURE_SKIP_REL * norm(&s) * norm(&yv) {
                    if hist.len() == LBFGS_MEMORY {
                        hist.pop_front();
                    }
                    hist.push_back((s, yv, 1.0 / sy));
                }
                x = x_new;
                f = f_new;
                g = g_new;
                values.push(f);
                iterations += 1;
            }
            None => {
                if !hist.is_empty() {
                    // The quasi-Newton model misled the search; retry this
                    // round from scratch along steepest descent.
                    hist.clear();
                    continue;
                }
                // Even steepest descent found no representable decrease:
                // the value sits at its numerical floor.
                stalled = true;
                break;
            }
        }
    }
    if !converged {
        converged = norm(&g) <= grad_tol;
    }
    // A stall after essentially no recent value progress (or with no room
    // to take even one step) means the value was already resolved.
    let value_flat = stalled && {
        const WINDOW: usize = 20;
        if iterations < WINDOW {
            true
        } else {
            let drop = values[iterations - WINDOW] - f;
            drop <= 1e-8 * f.abs().max(1e-6)
        }
    };
    debug_assert_eq!(Some(&f), values.last());
    LbfgsReport {
        grad_norm: norm(&g),
        iterations,
        converged,
        stalled,
        value_flat,
        values,
        x,
    }
}

// ---------------------------------------------------------------------------
// Chemical-potential targeting and public entry points
// ---------------------------------------------------------------------------

/// Recover the chemical potentials for which a given state is closest to
/// grand-canonical stationarity: since the objective gradient is affine in
/// μ (`∇F(μ) = ∇e0 − Σ_α μ_α ∇ρ_α`), a least-squares fit of `∇e0` onto the
/// density gradients recovers the μ of a converged state exactly.  Returns
/// `None` for ill-conditioned fits (penalized or density-insensitive
/// states), in which case the oracle seed is used instead.
fn estimate_mu_from_state(params: &CmpsParams, p: &FieldParams, fd_step: f64) -> Option<Vec<f64>> {
    let species = params.species_count();
    let zero = vec![0.0; species];
    let g0 = eval_core(params, p, &zero, None, true, fd_step).ok()?;
    if g0.penalized {
        return None;
    }
    let ge = g0.grad?;
    let mut grho: Vec<Vec<f64>> = Vec::with_capacity(species);
    for alpha in 0..species {
        let mut mu_unit = vec![0.0; species];
        mu_unit[alpha] = 1.0;
        let ga = eval_core(params, p, &mu_unit, None, true, fd_step).ok()?;
        if ga.penalized {
            return None;
        }
        let ga = ga.grad?;
        grho.push(ge.iter().zip(&ga).map(|(a, b)| a - b).collect());
    }
    match species {
        1 => {
            let a = dot(&grho[0], &grho[0]);
            if a <= 1e-24 {
                return None;
            }
            let mu = dot(&grho[0], &ge) / a;
            mu.is_finite().then(|| vec![mu])
        }
        2 => {
            let a11 = dot(&grho[0], &grho[0]);
            let a12 = dot(&grho[0], &grho[1]);
            let a22 = dot(&grho[1], &grho[1]);
            let b1 = dot(&grho[0], &ge);
            let b2 = dot(&grho[1], &ge);
            let det = a11 * a22 - a12 * a12;
            if !(det > 1e-12 * (a11 * a22).max(1e-300)) {
                return None;
            }
            let mu1 = (b1 * a22 - b2 * a12) / det;
            let mu2 = (b2 * a11 - b1 * a12) / det;
            (mu1.is_finite() && mu2.is_finite()).then(|| vec![mu1, mu2])
        }
        _ => None,
    }
}

/// Initial chemical potentials: exact integrable-model values for the
/// intra-species part plus the mean-field inter-species shift.
fn seed_mu(p: &FieldParams) -> Vec<f64> {
    let n = p.target_rho.len();
    (0..n)
        .map(|i| {
            let rho = p.target_rho[i];
            let base = if p.c > 0.0 && rho > 0.0 {
                bethe::chemical_potential(p.c, rho).unwrap_or(2.0 * p.c * rho)
            } else {
                0.0
            };
            let cross = if n == 2 { p.g * p.target_rho[1 - i] } else { 0.0 };
            base + cross
        })
        .collect()
}

/// Initial diagonal density response `dμ_α/dρ_α`, used as the first secant
/// slope: `v²/(2ρ)` from the integrable oracle plus the mean-field
/// inter-species coupling.
fn seed_response(p: &FieldParams) -> Vec<f64> {
    let n = p.target_rho.len();
    let floor = (0.05 * (p.c + p.g.abs())).max(1e-2);
    (0..n)
        .map(|i| {
            let rho = p.target_rho[i];
            let intra = if p.c > 0.0 && rho > 0.0 {
                match bethe::sound_velocity(p.c, rho) {
                    Ok(v) => v * v / (2.0 * rho),
                    Err(_) => 2.0 * p.c,
                }
            } else {
                0.0
            };
            let cross = if n == 2 { p.g.abs() } else { 0.0 };
            (intra + cross).max(floor)
        })
        .collect()
}

fn minimize_from_inner(
    params0: CmpsParams,
    p: &FieldParams,
    cfg: &OptimizerConfig,
    seed_used: u64,
    mu_seed: Option<Vec<f64>>,
    warm: bool,
) -> Result<GroundStateResult> {
    let shape = params0.shape();
    let species = params0.species_count();
    let targets = p.target_rho.clone();
    let mut x = params0.pack();
    let mut mu = mu_seed.unwrap_or_else(|| seed_mu(p));
    let h0 = seed_response(p);
    // Augmented-Lagrangian density targeting.  Each round minimizes the
    // grand-canonical objective plus a quadratic restraint on the densities,
    // then absorbs the restraint force into the chemical potentials
    // (first-order multiplier update).  The restraint keeps every species
    // populated — without it, a strongly repulsive mixture at symmetric μ
    // empties one species entirely, and `R_α = 0` is a stationary trap —
    // and it tames directions in which ρ(μ) is too steep for any secant.
    let mut w = h0.clone();
    let mut prev_err: Option<f64> = None;
    let mut consecutive_stagnant = 0usize;
    let mut total_iters = 0usize;
    let mut final_report: Option<LbfgsReport> = None;
    let mut last_pen: Option<DensityPenalty> = None;
    let mut rho_last = vec![0.0; species];
    let mut density_ok = false;
    let mut penalized = false;
    let mut inner_ok = false;

    for outer_round in 0..MU_OUTER_MAX {
        // A warm start is already at a targeted optimum, so its first round
        // runs unrestrained and an exactly converged input exits at once.
        let pen_round = if warm && outer_round == 0 {
            None
        } else {
            Some(DensityPenalty {
                w: w.clone(),
                target: targets.clone(),
            })
        };
        let pen_ref = pen_round.as_ref();
        let mu_now = mu.clone();
        // Early rounds run short: while the multipliers are still far from
        // their fixed point, deep descent of a mis-targeted objective is
        // wasted work, and frequent multiplier updates converge the outer
        // loop in far fewer total iterations.
        let round_cap = cfg.max_iters.min(400usize << outer_round.min(8));
        let report = lbfgs(
            &x,
            cfg.grad_tol,
            round_cap,
            |xv| match shape
                .unpack(xv)
                .and_then(|prm| eval_core(&prm, p, &mu_now, pen_ref, true, cfg.fd_step))
            {
                Ok(ev) => (ev.value, ev.grad.expect("gradient requested")),
                Err(_) => (f64::INFINITY, vec![0.0; xv.len()]),
            },
            |xv| match shape
                .unpack(xv)
                .and_then(|prm| eval_core(&prm, p, &mu_now, pen_ref, false, cfg.fd_step))
            {
                Ok(ev) => ev.value,
                Err(_) => f64::INFINITY,
            },
        );
        total_iters += report.iterations;
        x = report.x.clone();
        inner_ok = report.converged_or_stalled(cfg.grad_tol);
        let probe = eval_core(&shape.unpack(&x)?, p, &mu_now, None, false, cfg.fd_step)?;
        penalized = probe.penalized;
        rho_last = probe.rho.clone();
        if std::env::var_os("DEMIXER_TRACE_MU").is_some() {
            eprintln!(
                "mu round {outer_round}: mu={mu_now:?} w={:?} rho={:?} inner_iters={} \
                 grad_norm={:.2e} conv={} stalled={}",
                pen_ref.map_or(&[][..], |q| &q.w),
                probe.rho,
                report.iterations,
                report.grad_norm,
                report.converged,
                report.stalled
            );
        }
        let round_iters = report.iterations;
        final_report = Some(report);
        last_pen = pen_round;
        if penalized {
            break;
        }
        let rel_err = probe
            .rho
            .iter()
            .zip(&targets)
            .map(|(r, t)| ((r - t) / t).abs())
            .fold(0.0f64, f64::max);
        density_ok = rel_err <= cfg.mu_tol;
        if density_ok && inner_ok {
            break;
        }
        // Rounds that hit the iteration cap still feed the multiplier
        // update (inexact augmented Lagrangian) and the loop carries on
        // until progress stops or the total budget is spent.
        consecutive_stagnant = if round_iters == 0 {
            consecutive_stagnant + 1
        } else {
            0
        };
        if consecutive_stagnant >= 2 || total_iters >= TOTAL_ITERS_FACTOR * cfg.max_iters {
            break;
        }
        if !density_ok {
            // Multiplier update: the restraint force at the restrained
            // optimum is the correction the chemical potentials are missing.
            for alpha in 0..species {
                let delta = -2.0 * w[alpha] * (probe.rho[alpha] - targets[alpha]);
                let cap = 5.0 * h0[alpha] * targets[alpha];
                mu[alpha] += delta.clamp(-cap, cap);
            }
            // Stiffen the restraint when the error stops contracting.
            if let Some(pe) = prev_err {
                if rel_err > 0.5 * pe {
                    for (wa, h) in w.iter_mut().zip(&h0) {
                        *wa = (*wa * 2.0).min(100.0 * h);
                    }
                }
            }
            prev_err = Some(rel_err);
        }
    }

    let report = final_report.expect("at least one inner run");
    if !density_ok && inner_ok && !penalized {
        return Err(Error::DensityTargetError(format!(
            "density targeting did not reach |ρ−target|/target ≤ {:.1e} within \
             {MU_OUTER_MAX} rounds (μ = {:?}, ρ = {:?})",
            cfg.mu_tol, mu, rho_last
        )));
    }
    let params = shape.unpack(&x)?;
    let state = params.assemble()?;
    let observables = measure(&state, p)?;
    let converged = inner_ok && density_ok && !penalized;
    // Report the chemical potentials at which the returned state is
    // grand-canonically stationary: the restraint force shifts them away
    // from the loop's multipliers by 2w(ρ−target).
    let mu_report = match (&last_pen, converged) {
        (Some(q), true) => q.mu_effective(&mu, &rho_last),
        _ => mu,
    };
    Ok(GroundStateResult {
        state,
        observables,
        mu: mu_report,
        grad_norm: report.grad_norm,
        converged,
        iterations: total_iters,
        seed_used,
    })
}

/// Resume a ground-state search from explicit parameters (warm start).
/// A run restarted from its own converged result terminates within two
/// quasi-Newton iterations.
pub fn minimize_from(
    params0: &CmpsParams,
    p: &FieldParams,
    cfg: &OptimizerConfig,
) -> Result<GroundStateResult> {
    cfg.validate()?;
    p.validate(params0.species_count())?;
    let mu_seed = estimate_mu_from_state(params0, p, cfg.fd_step);
    let warm = mu_seed.is_some();
    minimize_from_inner(params0.clone(), p, cfg, cfg.seed, mu_seed, warm)
}

/// Warm start with an explicit chemical-potential seed.
///
/// Like [`minimize_from`], but the first unrestrained descent runs at the
/// supplied `mu0` instead of the potentials recovered from the state's own
/// stationarity.  Callers that know how the potentials respond to a change
/// in the target densities (e.g. a linear-response estimate along an
/// energy-surface stencil) land on the new targets in a single round where
/// the recovered-μ path would need several restrained rounds to walk there.
pub fn minimize_from_seeded(
    params0: &CmpsParams,
    p: &FieldParams,
    cfg: &OptimizerConfig,
    mu0: Vec<f64>,
) -> Result<GroundStateResult> {
    cfg.validate()?;
    p.validate(params0.species_count())?;
    if mu0.len() != p.species_count() || mu0.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidParameters(format!(
            "chemical-potential seed must hold {} finite entries",
            p.species_count()
        )));
    }
    minimize_from_inner(params0.clone(), p, cfg, cfg.seed, Some(mu0), true)
}

/// Best-of-restarts ground-state search at the target densities in `p`.
///
/// Single-species searches (and tiny pair searches) start from random
/// draws.  Pair searches at `d ≥ 3` are grown from a converged `d = 2`
/// solution instead: the small state already carries the coarse structure
/// of the phase — in particular the two-block structure of a demixed
/// mixture — and each enlargement then refines rather than rediscovers it,
/// which avoids very long valley crawls from cold starts in the stiff
/// large-`d` landscape.  If the grown chain fails to converge, the search
/// falls back to cold restarts at the full bond dimension.
pub fn minimize(shape: StateShape, p: &FieldParams, cfg: &OptimizerConfig) -> Result<GroundStateResult> {
    cfg.validate()?;
    p.validate(shape.species_count())?;
    if let StateShape::Pair { d, p: channels } = shape {
        if d >= 3 {
            match minimize_grown(d, channels, p, cfg) {
                Ok(res) if res.converged => return Ok(res),
                _ => {}
            }
        }
    }
    minimize_cold(shape, p, cfg)
}

/// Grow a converged `d = 2` pair solution one bond dimension at a time up
/// to `d_target`, re-solving at every step.
fn minimize_grown(
    d_target: usize,
    channels: usize,
    p: &FieldParams,
    cfg: &OptimizerConfig,
) -> Result<GroundStateResult> {
    let mut cur = minimize_cold(StateShape::Pair { d: 2, p: channels }, p, cfg)?;
    for dd in 3..=d_target {
        if !cur.converged {
            return Ok(cur);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xB0D0 + dd as u64));
        // Widen the embedding noise until the grown state is injective.
        let mut grown = None;
        for widen in 0..4 {
            let cand = grow_params(cur.state.source(), dd, GROW_EPS * 2f64.powi(widen), &mut rng);
            if !objective(&cand, p, &cur.mu)?.penalized {
                grown = Some(cand);
                break;
            }
        }
        let Some(grown) = grown else {
            return Ok(GroundStateResult {
                converged: false,
                ..cur
            });
        };
        cur = minimize_from_inner(grown, p, cfg, cur.seed_used, Some(cur.mu.clone()), false)?;
    }
    Ok(cur)
}

fn minimize_cold(
    shape: StateShape,
    p: &FieldParams,
    cfg: &OptimizerConfig,
) -> Result<GroundStateResult> {
    let mut best: Option<GroundStateResult> = None;
    let mut last_err: Option<Error> = None;
    let mut converged_energies: Vec<f64> = Vec::new();
    for attempt in 0..cfg.restarts {
        let seed_attempt = cfg
            .seed
            .wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let params0 = match init_params(shape, p, cfg, seed_attempt) {
            Ok(prm) => prm,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        match minimize_from_inner(params0, p, cfg, seed_attempt, None, false) {
            Ok(res) => {
                if res.converged {
                    converged_energies.push(res.observables.e0);
                }
                best = Some(match best.take() {
                    None => res,
                    Some(cur) => better_of(cur, res),
                });
                if converged_energies.len() >= 2 {
                    let mut v = converged_energies.clone();
                    v.sort_by(f64::total_cmp);
                    if (v[1] - v[0]).abs() <= 1e-7 * v[0].abs().max(1e-12) {
                        break;
                    }
                }
            }
            Err(e) => {
                last_err = Some(e);
            }
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::DensityTargetError("all restarts failed".into()))
    })
}

fn better_of(a: GroundStateResult, b: GroundStateResult) -> GroundStateResult {
    match (a.converged, b.converged) {
        (true, false) => a,
        (false, true) => b,
        // Ties keep the earlier candidate so the outcome is order-stable.
        _ => {
            if b.observables.e0 < a.observables.e0 {
                b
            } else {
                a
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Initial states
// ---------------------------------------------------------------------------

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn noise_matrix(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> CMat {
    let s = scale / (2.0 * d as f64).sqrt();
    Array2::from_shape_fn((d, d), |_| C64::new(gaussian(rng) * s, gaussian(rng) * s))
}

fn herm_noise(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> CMat {
    hermitize(&noise_matrix(d, scale, rng))
}

fn draw_params(
    shape: StateShape,
    p: &FieldParams,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> CmpsParams {
    match shape {
        StateShape::Single { d } => {
            let k = herm_noise(d, scale, rng);
            let amp = (p.target_rho[0] / d as f64).sqrt();
            let r = &identity(d).mapv(|z| z * amp) + &noise_matrix(d, scale * amp, rng);
            CmpsParams::Single(CmpsSingle { d, k, r })
        }
        StateShape::Pair { d, p: channels } => {
            let k1 = herm_noise(d, scale, rng);
            let k2 = herm_noise(d, scale, rng);
            let amp1 = (p.target_rho[0] / d as f64).sqrt();
            let amp2 = (p.target_rho[1] / d as f64).sqrt();
            let r1 = &identity(d).mapv(|z| z * amp1) + &noise_matrix(d, scale * amp1, rng);
            let r2 = &identity(d).mapv(|z| z * amp2) + &noise_matrix(d, scale * amp2, rng);
            let mut z1 = Vec::with_capacity(channels);
            let mut z2 = Vec::with_capacity(channels);
            for _ in 0..channels {
                z1.push(herm_noise(d, 0.1 * scale, rng));
                z2.push(herm_noise(d, 0.1 * scale, rng));
            }
            CmpsParams::Pair(CmpsPair {
                d,
                p: channels,
                k1,
                k2,
                r1,
                r2,
                z1,
                z2,
            })
        }
    }
}

/// Rescale each field matrix so the *measured* initial densities match the
/// targets to leading order (two fixed-point sweeps).  Exact for `D = 1`.
fn rescale_to_targets(mut params: CmpsParams, p: &FieldParams) -> Result<CmpsParams> {
    for _ in 0..2 {
        let a = params.assemble()?;
        let fast = fast_stationary(&a)?;
        let species = a.rs.len();
        let mut scales = Vec::with_capacity(species);
        for (alpha, r_op) in a.rs.iter().enumerate() {
            let rho = expval(r_op, &fast.r);
            if !(rho.is_finite() && rho > 1e-12) {
                return Err(Error::NonInjectiveState(format!(
                    "initial state has vanishing density for species {alpha}"
                )));
            }
            scales.push((p.target_rho[alpha] / rho).sqrt());
        }
        params = match params {
            CmpsParams::Single(mut s) => {
                s.r.mapv_inplace(|z| z * scales[0]);
                CmpsParams::Single(s)
            }
            CmpsParams::Pair(mut s) => {
                s.r1.mapv_inplace(|z| z * scales[0]);
                s.r2.mapv_inplace(|z| z * scales[1]);
                CmpsParams::Pair(s)
            }
        };
    }
    Ok(params)
}

/// Noise scale (relative to a block's typical entry) used when embedding a
/// state into a larger bond dimension.
const GROW_EPS: f64 = 0.03;

fn grow_block(m: &CMat, d_new: usize, eps: f64, herm: bool, rng: &mut ChaCha8Rng) -> CMat {
    let d = m.nrows();
    // Entry scale: eps times the typical entry of the existing block, with
    // a floor so an (almost) zero block still gets coupled.
    let entry = (frob_norm(m) / d as f64).max(0.05) * eps;
    let scale = entry * (2.0 * d_new as f64).sqrt();
    let mut out = if herm {
        herm_noise(d_new, scale, rng)
    } else {
        noise_matrix(d_new, scale, rng)
    };
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

/// Embed parameters into a larger bond dimension: the existing matrices
/// occupy the top-left block and every new entry is small noise.  Exact
/// zero padding would leave the new bond directions decoupled (a reducible
/// state); the noise keeps the embedding injective while staying close
/// enough to the input that a warm restart refines instead of rediscovers.
fn grow_params(params: &CmpsParams, d_new: usize, eps: f64, rng: &mut ChaCha8Rng) -> CmpsParams {
    match params {
        CmpsParams::Single(s) => CmpsParams::Single(CmpsSingle {
            d: d_new,
            k: grow_block(&s.k, d_new, eps, true, rng),
            r: grow_block(&s.r, d_new, eps, false, rng),
        }),
        CmpsParams::Pair(s) => CmpsParams::Pair(CmpsPair {
            d: d_new,
            p: s.p,
            k1: grow_block(&s.k1, d_new, eps, true, rng),
            k2: grow_block(&s.k2, d_new, eps, true, rng),
            r1: grow_block(&s.r1, d_new, eps, false, rng),
            r2: grow_block(&s.r2, d_new, eps, false, rng),
            z1: s.z1.iter().map(|z| grow_block(z, d_new, eps, true, rng)).collect(),
            z2: s.z2.iter().map(|z| grow_block(z, d_new, eps, true, rng)).collect(),
        }),
    }
}

/// Draw a random injective initial state near the target densities.
/// Redraws with widened noise if a draw happens to be (near-)reducible.
fn init_params(
    shape: StateShape,
    p: &FieldParams,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<CmpsParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err: Option<Error> = None;
    for widen in 0..6 {
        let scale = cfg.init_scale * 1.5f64.powi(widen);
        let cand = draw_params(shape, p, scale, &mut rng);
        match rescale_to_targets(cand, p) {
            Ok(ok) => return Ok(ok),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        Error::NonInjectiveState("failed to draw an injective initial state".into())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmps::StateShape;
    use approx::assert_abs_diff_eq;

    fn scalar_single(rho: f64, k: f64) -> CmpsParams {
        CmpsParams::Single(CmpsSingle {
            d: 1,
            k: CMat::from_elem((1, 1), C64::new(k, 0.0)),
            r: CMat::from_elem((1, 1), C64::new(rho.sqrt(), 0.0)),
        })
    }

    fn random_params(shape: StateShape, rho: &[f64], seed: u64) -> CmpsParams {
        let p = match rho.len() {
            1 => FieldParams::single(1.0, rho[0]),
            _ => FieldParams::pair(1.0, 1.0, rho[0], rho[1]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        draw_params(shape, &p, 0.35, &mut rng)
    }

    #[test]
    fn objective_matches_mean_field_on_scalar_state() {
        let c = 1.5;
        let rho = 0.5;
        let mu = 0.7;
        let params = scalar_single(rho, 0.3);
        let p = FieldParams::single(c, rho);
        let ev = objective(&params, &p, &[mu]).unwrap();
        assert!(!ev.penalized);
        assert_abs_diff_eq!(ev.e0, c * rho * rho, epsilon = 1e-12);
        assert_abs_diff_eq!(ev.value, c * rho * rho - mu * rho, epsilon = 1e-12);
        assert_abs_diff_eq!(ev.rho[0], rho, epsilon = 1e-12);
    }

    #[test]
    fn objective_agrees_with_full_measurement() {
        for (shape, rho_t) in [
            (StateShape::Single { d: 2 }, vec![0.6]),
            (StateShape::Pair { d: 2, p: 1 }, vec![0.5, 0.4]),
        ] {
            let params = random_params(shape, &rho_t, 11);
            let p = match rho_t.len() {
                1 => FieldParams::single(1.3, rho_t[0]),
                _ => FieldParams::pair(1.3, 0.8, rho_t[0], rho_t[1]),
            };
            let mu = vec![0.37; rho_t.len()];
            let ev = objective(&params, &p, &mu).unwrap();
            assert!(!ev.penalized);
            let obs = measure(&params.assemble().unwrap(), &p).unwrap();
            assert_abs_diff_eq!(ev.e0, obs.e0, epsilon = 1e-9);
            for (a, b) in ev.rho.iter().zip(&obs.rho) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn objective_is_affine_in_chemical_potentials() {
        let params = random_params(StateShape::Pair { d: 2, p: 1 }, &[0.5, 0.5], 3);
        let p = FieldParams::pair(1.2, 0.9, 0.5, 0.5);
        let f0 = objective(&params, &p, &[0.0, 0.0]).unwrap();
        let f1 = objective(&params, &p, &[0.8, 0.3]).unwrap();
        let predicted = f0.value - 0.8 * f0.rho[0] - 0.3 * f0.rho[1];
        assert_abs_diff_eq!(f1.value, predicted, epsilon = 1e-11);
    }

    #[test]
    fn reducible_state_takes_penalty_path() {
        // Diagonal R with distinct entries and K = 0 splits into two
        // decoupled scalar states: the stationary subspace is degenerate.
        let mut r = CMat::zeros((2, 2));
        r[(0, 0)] = C64::new(0.7, 0.0);
        r[(1, 1)] = C64::new(1.3, 0.0);
        let params = CmpsParams::Single(CmpsSingle {
            d: 2,
            k: CMat::zeros((2, 2)),
            r,
        });
        let p = FieldParams::single(1.0, 1.0);
        let ev = objective(&params, &p, &[0.5]).unwrap();
        assert!(ev.penalized);
        assert_eq!(ev.value, PENALTY_VALUE);
        let gr = gradient(&params, &p, &[0.5], 1e-5).unwrap();
        assert!(gr.penalized);
        assert!(gr.grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences_single_species() {
        for (d, seed) in [(2usize, 0u64), (2, 1), (2, 2), (3, 3)] {
            let shape = StateShape::Single { d };
            let params = random_params(shape, &[0.8], seed);
            let p = FieldParams::single(1.4, 0.8);
            let mu = [0.9];
            let analytic = gradient(&params, &p, &mu, 1e-5).unwrap();
            assert!(!analytic.penalized);
            assert!(!analytic.used_fd);
            let fd = fd_gradient(&params, &p, &mu, 1e-5).unwrap();
            for (i, (a, f)) in analytic.grad.iter().zip(&fd).enumerate() {
                assert!(
                    (a - f).abs() <= 1e-6,
                    "D={d} seed={seed} component {i}: analytic {a:.12e} vs FD {f:.12e}"
                );
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences_pair() {
        for (d, channels, seed) in [(2usize, 1usize, 5u64), (2, 2, 6), (3, 1, 7)] {
            let shape = StateShape::Pair { d, p: channels };
            let params = random_params(shape, &[0.6, 0.45], seed);
            let p = FieldParams::pair(1.2, 0.7, 0.6, 0.45);
            let mu = [0.8, 0.55];
            let analytic = gradient(&params, &p, &mu, 1e-5).unwrap();
            assert!(!analytic.penalized);
            assert!(!analytic.used_fd);
            let fd = fd_gradient(&params, &p, &mu, 1e-5).unwrap();
            for (i, (a, f)) in analytic.grad.iter().zip(&fd).enumerate() {
                assert!(
                    (a - f).abs() <= 1e-6,
                    "D={d} P={channels} seed={seed} component {i}: \
                     analytic {a:.12e} vs FD {f:.12e}"
                );
            }
        }
    }

    #[test]
    fn restrained_gradient_matches_finite_differences() {
        // The density restraint folds into effective chemical potentials;
        // verify the analytic path against finite differences of the full
        // restrained value for both topologies.
        let pen = DensityPenalty {
            w: vec![1.3, 0.7],
            target: vec![0.4, 0.6],
        };
        let params = random_params(StateShape::Pair { d: 2, p: 1 }, &[0.6, 0.45], 11);
        let p = FieldParams::pair(1.2, 0.7, 0.6, 0.45);
        let mu = [0.8, 0.55];
        let ev = eval_core(&params, &p, &mu, Some(&pen), true, 1e-5).unwrap();
        assert!(!ev.penalized && !ev.used_fd);
        let fd = fd_gradient_core(&params, &p, &mu, Some(&pen), 1e-5).unwrap();
        for (i, (a, f)) in ev.grad.as_ref().unwrap().iter().zip(&fd).enumerate() {
            assert!(
                (a - f).abs() <= 1e-6,
                "pair component {i}: analytic {a:.12e} vs FD {f:.12e}"
            );
        }

        let pen1 = DensityPenalty {
            w: vec![0.9],
            target: vec![0.7],
        };
        let params = random_params(StateShape::Single { d: 2 }, &[0.8], 12);
        let p = FieldParams::single(1.4, 0.8);
        let ev = eval_core(&params, &p, &[0.9], Some(&pen1), true, 1e-5).unwrap();
        let fd = fd_gradient_core(&params, &p, &[0.9], Some(&pen1), 1e-5).unwrap();
        for (i, (a, f)) in ev.grad.as_ref().unwrap().iter().zip(&fd).enumerate() {
            assert!(
                (a - f).abs() <= 1e-6,
                "single component {i}: analytic {a:.12e} vs FD {f:.12e}"
            );
        }
    }

    #[test]
    fn density_targeting_survives_demixing_collapse() {
        // Strong inter-species repulsion at symmetric targets: the
        // grand-canonical landscape prefers emptying one species entirely
        // (and R_α = 0 is a stationary trap), so only the density restraint
        // keeps both populated.  The converged state must hold both
        // densities at target and respect the variational bound set by the
        // exact phase-separated energy 8ρ³e(c/2ρ).
        let c = 1.5;
        let rho = 0.5;
        let p = FieldParams::symmetric_pair(c, 2.53 * c, rho);
        let cfg = OptimizerConfig {
            restarts: 2,
            ..OptimizerConfig::default()
        };
        let res = minimize(StateShape::Pair { d: 2, p: 1 }, &p, &cfg).unwrap();
        assert!(res.converged, "demixed-phase search did not converge");
        for alpha in 0..2 {
            let err = (res.observables.rho[alpha] - rho).abs() / rho;
            assert!(err <= cfg.mu_tol, "species {alpha} density off target: {err:e}");
        }
        // 8ρ³e(c/2ρ) is the energy density of one species carrying the
        // whole density 2ρ — i.e. the exact phase-separated value.
        let reference = bethe::reference_energy(c, 2.0 * rho).unwrap();
        assert!(
            res.observables.e0 >= reference - 1e-9,
            "variational bound violated: e0 {} < reference {reference}",
            res.observables.e0
        );
        // D = 2 expresses the two-block structure but each block is only
        // one-dimensional internally, so a sizable truncation error remains
        // (measured: ~16% at D = 2, shrinking roughly 3x per unit of D, ~1.4%
        // at D = 4). The point of this bound is that the optimizer reached the
        // demixed branch at all rather than a collapsed or mixed state.
        let excess = (res.observables.e0 - reference) / reference;
        assert!(excess < 0.25, "D=2 demixed energy excess {excess:e}");
    }

    #[test]
    fn gradient_vanishes_at_scalar_stationary_density() {
        // For D = 1 the energy density is e0 = cρ², so ρ* = μ/(2c) is the
        // exact grand-canonical stationary point for any K.
        let c = 1.5;
        let mu = 0.9;
        let rho_star = mu / (2.0 * c);
        let params = scalar_single(rho_star, -0.4);
        let p = FieldParams::single(c, rho_star);
        let gr = gradient(&params, &p, &[mu], 1e-5).unwrap();
        for (i, v) in gr.grad.iter().enumerate() {
            assert!(v.abs() < 1e-10, "component {i} = {v:e}");
        }
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let fg = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (f, g)
        };
        let fo = |x: &[f64]| fg(x).0;
        let report = lbfgs(&[-1.2, 1.0], 1e-8, 500, fg, fo);
        assert!(report.converged, "no convergence in {} iters", report.iterations);
        assert_abs_diff_eq!(report.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(report.x[1], 1.0, epsilon = 1e-6);
        // Armijo enforces strict descent.
        for w in report.values.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn descent_is_monotone_and_bit_deterministic() {
        let shape = StateShape::Single { d: 2 };
        let p = FieldParams::single(1.5, 0.5);
        let mu = [1.2];
        let params = random_params(shape, &[0.5], 42);
        let x0 = params.pack();
        let run = || {
            lbfgs(
                &x0,
                1e-6,
                120,
                |xv| {
                    let prm = shape.unpack(xv).unwrap();
                    let ev = eval_core(&prm, &p, &mu, None, true, 1e-5).unwrap();
                    (ev.value, ev.grad.unwrap())
                },
                |xv| {
                    let prm = shape.unpack(xv).unwrap();
                    eval_core(&prm, &p, &mu, None, false, 1e-5).unwrap().value
                },
            )
        };
        let r1 = run();
        let r2 = run();
        assert_eq!(r1.values, r2.values, "objective sequences differ between identical runs");
        assert_eq!(r1.x, r2.x, "iterates differ between identical runs");
        for w in r1.values.windows(2) {
            assert!(w[1] <= w[0], "descent not monotone: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn minimize_reaches_mean_field_optimum_at_unit_bond_dimension() {
        let p = FieldParams::single(1.5, 0.5);
        let cfg = OptimizerConfig {
            restarts: 2,
            ..OptimizerConfig::default()
        };
        let res = minimize(StateShape::Single { d: 1 }, &p, &cfg).unwrap();
        assert!(res.converged);
        // D = 1 can only represent the mean-field (coherent) state.
        let rho = res.observables.rho[0];
        assert!((rho - 0.5).abs() / 0.5 <= cfg.mu_tol);
        assert_abs_diff_eq!(res.observables.e0, 1.5 * rho * rho, epsilon = 1e-8);
        assert_abs_diff_eq!(res.mu[0], 2.0 * 1.5 * 0.5, epsilon = 0.05);
    }

    #[test]
    fn minimize_handles_interaction_free_limit() {
        // Zero coupling: the exact ground state is the coherent condensate
        // with zero energy density at any density, representable at D = 1.
        let p = FieldParams::single(0.0, 0.8);
        let cfg = OptimizerConfig {
            restarts: 1,
            ..OptimizerConfig::default()
        };
        let res = minimize(StateShape::Single { d: 1 }, &p, &cfg).unwrap();
        assert!(res.converged);
        assert!(res.observables.e0.abs() <= 1e-8, "e0 = {:e}", res.observables.e0);
        assert!((res.observables.rho[0] - 0.8).abs() / 0.8 <= cfg.mu_tol);
    }

    #[test]
    fn minimize_single_species_respects_variational_bound() {
        // D = 3 at γ = 3: the variational energy must sit above the exact
        // integrable-model value and already within a couple of percent.
        let c = 1.5;
        let rho = 0.5;
        let p = FieldParams::single(c, rho);
        let cfg = OptimizerConfig {
            restarts: 2,
            max_iters: 4000,
            ..OptimizerConfig::default()
        };
        let res = minimize(StateShape::Single { d: 3 }, &p, &cfg).unwrap();
        assert!(res.converged, "grad_norm = {:e}", res.grad_norm);
        let exact = bethe::reference_energy(c, res.observables.rho[0]).unwrap();
        assert!(
            res.observables.e0 >= exact - 1e-9,
            "variational bound violated: e0 = {:.12} < exact = {:.12}",
            res.observables.e0,
            exact
        );
        // Truncation error shrinks monotonically with bond dimension
        // (measured: ~8% at D=2, ~2.5% at D=3, ~0.6% at D=5 for γ = 3).
        let rel = (res.observables.e0 - exact) / exact;
        assert!(rel < 0.04, "D=3 relative excess {rel:.3e} unexpectedly large");
    }

    #[test]
    fn warm_restart_terminates_within_two_iterations() {
        let p = FieldParams::single(1.5, 0.5);
        let cfg = OptimizerConfig {
            restarts: 1,
            ..OptimizerConfig::default()
        };
        let res = minimize(StateShape::Single { d: 2 }, &p, &cfg).unwrap();
        assert!(res.converged);
        let again = minimize_from(res.state.source(), &p, &cfg).unwrap();
        assert!(again.converged);
        assert!(
            again.iterations <= 2,
            "warm restart took {} iterations",
            again.iterations
        );
        assert_abs_diff_eq!(again.observables.e0, res.observables.e0, epsilon = 1e-9);
    }

    #[test]
    fn decoupled_pair_energy_is_additive() {
        let c = 1.3;
        let rho = 0.45;
        let cfg = OptimizerConfig {
            restarts: 2,
            ..OptimizerConfig::default()
        };
        let single = minimize(StateShape::Single { d: 2 }, &FieldParams::single(c, rho), &cfg).unwrap();
        let pair = minimize(
            StateShape::Pair { d: 2, p: 1 },
            &FieldParams::pair(c, 0.0, rho, rho),
            &cfg,
        )
        .unwrap();
        assert!(single.converged && pair.converged);
        let rel = (pair.observables.e0 - 2.0 * single.observables.e0).abs()
            / (2.0 * single.observables.e0);
        assert!(
            rel < 5e-3,
            "decoupled pair e0 = {:.8} vs 2×single = {:.8} (rel {rel:.2e})",
            pair.observables.e0,
            2.0 * single.observables.e0
        );
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = OptimizerConfig::default();
        cfg.mu_tol = 1.5;
        assert!(cfg.validate().is_err());
        cfg = OptimizerConfig::default();
        cfg.grad_tol = 0.0;
        assert!(cfg.validate().is_err());
        cfg = OptimizerConfig::default();
        cfg.restarts = 0;
        assert!(cfg.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}

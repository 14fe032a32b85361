//! Normal-mode analysis of the two-species energy surface.
//!
//! The canonical ground-state energy density `e0(ρ1, ρ2)` of the symmetric
//! mixture defines two sound-like normal modes in the rotated density
//! coordinates ρ± = ρ1 ± ρ2: the in-phase (total-density) mode and the
//! out-of-phase (spin/relative-density) mode, with squared velocities
//!
//! ```text
//! v±² = 2 ρ₊ · ∂²e0 / ∂ρ±²          (ρ₊ evaluated at the stencil center)
//! ```
//!
//! The prefactor `2ρ₊` is used for *both* modes.  This convention is fixed by
//! the decoupled limit `g = 0`, where each species is an independent gas and
//! both modes must reproduce the single-species sound velocity
//! `v² = 2ρ·∂²e0/∂ρ²` (for the free-fermion-like limit this gives the exact
//! `v = 2πρ`); the alternative `2ρ₋` prefactor for the relative mode vanishes
//! identically at the symmetric point ρ₋ = 0 and cannot describe a softening
//! mode there.
//!
//! The out-of-phase mode softens as the interspecies repulsion grows;
//! `v₋²` crossing zero locates the mixing/demixing transition.  This module
//! extracts both velocities by rotated central differences on a 3×3 stencil
//! of constrained ground states, compares them against weak-coupling
//! (bosonization) estimates, locates the transition by two independent
//! detectors (velocity zero crossing and interspecies-fluctuation collapse),
//! and validates demixed-phase states against the phase-separated reference
//! (a single gas at doubled density).

use crate::bethe;
use crate::cmps::{CmpsParams, StateShape};
use crate::error::{Error, Result};
use crate::observables::{correlation_curve, FieldParams};
use crate::optimize::{
    minimize, minimize_from, minimize_from_seeded, GroundStateResult, OptimizerConfig,
};
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

/// Default stencil step as a fraction of the per-species density.
pub const DEFAULT_STEP_FRACTION: f64 = 0.02;

/// C12(0) below this multiple of ρ² counts as vanished interspecies overlap
/// (the fluctuation detector for the demixing transition).
pub const FLUCTUATION_FLOOR: f64 = 1e-3;

/// Distance window (in units of inverse density) over which the demixed
/// intraspecies correlator is scanned for its intermediate plateau.
pub const PLATEAU_WINDOW: f64 = 10.0;

// ---------------------------------------------------------------------------
// Energy-surface stencil
// ---------------------------------------------------------------------------

/// A 3×3 grid of constrained ground-state energies around a density center,
/// used to form second derivatives of `e0(ρ1, ρ2)` by central differences.
#[derive(Debug, Clone)]
pub struct EnergySurfaceStencil {
    /// Center densities (ρ1, ρ2).
    pub center: (f64, f64),
    /// Density step of the grid.
    pub h: f64,
    /// `e_values[i][j]` is the ground-state energy density at
    /// `(ρ1 + (i−1)·h, ρ2 + (j−1)·h)`, tangent-plane-corrected from the
    /// solver's achieved densities to the exact grid targets (see
    /// `energy_at_targets`).
    pub e_values: [[f64; 3]; 3],
    /// Per-point ground states in row-major order: `points[3·i + j]`
    /// corresponds to `e_values[i][j]`.
    pub points: Vec<GroundStateResult>,
}

impl EnergySurfaceStencil {
    /// The ground state at the stencil center.
    pub fn center_result(&self) -> &GroundStateResult {
        &self.points[4]
    }

    /// Second derivative along the total density, `∂²e0/∂ρ₊²`, from the
    /// diagonal second difference (step `h·(1,1)` moves ρ₊ by `2h`).
    pub fn d2_plus(&self) -> f64 {
        (self.e_values[2][2] - 2.0 * self.e_values[1][1] + self.e_values[0][0])
            / (4.0 * self.h * self.h)
    }

    /// Second derivative along the relative density, `∂²e0/∂ρ₋²`, from the
    /// antidiagonal second difference.
    pub fn d2_minus(&self) -> f64 {
        (self.e_values[2][0] - 2.0 * self.e_values[1][1] + self.e_values[0][2])
            / (4.0 * self.h * self.h)
    }

    /// Largest energy difference between species-exchanged grid points,
    /// `max |e(ρ1+a, ρ2+b) − e(ρ1+b, ρ2+a)|`.  For a symmetric center with
    /// species-symmetric couplings this is a pure solver-error diagnostic.
    pub fn mirror_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..i {
                worst = worst.max((self.e_values[i][j] - self.e_values[j][i]).abs());
            }
        }
        worst
    }
}

/// Directional second derivatives of an arbitrary energy surface by the same
/// rotated central differences as [`EnergySurfaceStencil`]: returns
/// `(∂²e/∂ρ₊², ∂²e/∂ρ₋²)` at `center` with step `s`.
fn rotated_second_derivatives(
    eval: &mut dyn FnMut(f64, f64) -> Result<f64>,
    center: (f64, f64),
    s: f64,
) -> Result<(f64, f64)> {
    let (r1, r2) = center;
    let e_pp = eval(r1 + s, r2 + s)?;
    let e_mm = eval(r1 - s, r2 - s)?;
    let e_pm = eval(r1 + s, r2 - s)?;
    let e_mp = eval(r1 - s, r2 + s)?;
    let e_00 = eval(r1, r2)?;
    let denom = 4.0 * s * s;
    Ok((
        (e_pp - 2.0 * e_00 + e_mm) / denom,
        (e_pm - 2.0 * e_00 + e_mp) / denom,
    ))
}

/// Squared normal-mode velocities `(v₊², v₋²)` of an arbitrary energy
/// surface `e(ρ1, ρ2)`, by rotated central differences with step `h`; with
/// `richardson` the step is halved once and the O(h²) error eliminated by
/// extrapolation.
///
/// Central differences are exact (to roundoff) on quadratic surfaces, so a
/// test surface `e = a(ρ1² + ρ2²) + b·ρ1ρ2` recovers `v±² = 2ρ₊(a ± b/2)`
/// exactly — the standard correctness check for the stencil geometry.
pub fn velocities_on_surface(
    eval: &mut dyn FnMut(f64, f64) -> Result<f64>,
    center: (f64, f64),
    h: f64,
    richardson: bool,
) -> Result<(f64, f64)> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameters(
            "stencil step must be positive and finite".into(),
        ));
    }
    let rho_plus = center.0 + center.1;
    let (dp_h, dm_h) = rotated_second_derivatives(eval, center, h)?;
    let (dp, dm) = if richardson {
        let (dp_2, dm_2) = rotated_second_derivatives(eval, center, 0.5 * h)?;
        ((4.0 * dp_2 - dp_h) / 3.0, (4.0 * dm_2 - dm_h) / 3.0)
    } else {
        (dp_h, dm_h)
    };
    Ok((2.0 * rho_plus * dp, 2.0 * rho_plus * dm))
}

/// Central-difference slope of the single-species chemical potential
/// `dμ/dρ` at `(c, ρ)`, used to seed the stencil solves by linear response.
fn chemical_potential_slope(c: f64, rho: f64) -> Option<f64> {
    let d = 1e-3 * rho;
    let hi = bethe::chemical_potential(c, rho + d).ok()?;
    let lo = bethe::chemical_potential(c, rho - d).ok()?;
    let slope = (hi - lo) / (2.0 * d);
    slope.is_finite().then_some(slope)
}

fn validate_stencil_inputs(shape: StateShape, p: &FieldParams, h: f64) -> Result<()> {
    p.validate(shape.species_count())?;
    if shape.species_count() != 2 {
        return Err(Error::InvalidParameters(
            "energy-surface stencils require a two-species state".into(),
        ));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameters(
            "stencil step must be positive and finite".into(),
        ));
    }
    let min_rho = p.target_rho.iter().cloned().fold(f64::INFINITY, f64::min);
    if h >= min_rho {
        return Err(Error::InvalidParameters(format!(
            "stencil step {h} reaches non-positive densities (smallest target {min_rho})"
        )));
    }
    Ok(())
}

/// Solve the 3×3 grid of constrained ground states centered on the targets
/// in `p`, with step `h`.
///
/// The center is solved first (warm-started from `warm_from` when given),
/// and the eight ring points are then warm-started from the center state
/// with chemical potentials seeded by linear response: `dμ_α/dρ_α` from the
/// single-species oracle and `dμ_α/dρ_β ≈ g` (the mean-field cross term).
/// Any unconverged or failed point is collected, and the full list is
/// reported in a single stencil error.
///
/// For a symmetric center the grid must respect species exchange; the
/// mirror asymmetry is checked against twice the optimizer's energy
/// resolution (taken as `grad_tol` relative to the energy scale).
pub fn energy_stencil(
    shape: StateShape,
    p: &FieldParams,
    h: f64,
    cfg: &OptimizerConfig,
    warm_from: Option<&CmpsParams>,
) -> Result<EnergySurfaceStencil> {
    validate_stencil_inputs(shape, p, h)?;
    let center = match warm_from {
        Some(w) => minimize_from(w, p, cfg)?,
        None => minimize(shape, p, cfg)?,
    };
    stencil_around(center, p, h, cfg)
}

/// Energy of a solved point corrected to its *target* densities to first
/// order: `e(t) ≈ e(ρ) − Σ_α μ_α (ρ_α − t_α)`.
///
/// The optimizer only places densities within `mu_tol`, and an O(δρ)
/// placement error feeds the stencil an energy error `μ·δρ` that competes
/// with the curvature signal `e″·h²` itself (both are ~1e-4 at default
/// tolerances).  Subtracting the tangent-plane term knocks the placement
/// error down to O(e″·δρ²), far below the signal.
fn energy_at_targets(res: &GroundStateResult, targets: &[f64]) -> f64 {
    let mut e = res.observables.e0;
    for (alpha, t) in targets.iter().enumerate() {
        e -= res.mu[alpha] * (res.observables.rho[alpha] - t);
    }
    e
}

/// Build the ring of a stencil around an already-solved center.
fn stencil_around(
    center: GroundStateResult,
    p: &FieldParams,
    h: f64,
    cfg: &OptimizerConfig,
) -> Result<EnergySurfaceStencil> {
    let trace = std::env::var_os("DEMIXER_TRACE_STENCIL").is_some();
    let (r1, r2) = (p.target_rho[0], p.target_rho[1]);
    if !center.converged {
        return Err(Error::StencilError(format!(
            "(ρ1={r1}, ρ2={r2}): center unconverged"
        )));
    }
    let mut failures: Vec<String> = Vec::new();

    let slope1 = chemical_potential_slope(p.c, r1);
    let slope2 = chemical_potential_slope(p.c, r2);
    let center_params = center.state.source().clone();
    let center_mu = center.mu.clone();

    let mut e_values = [[f64::NAN; 3]; 3];
    e_values[1][1] = energy_at_targets(&center, &p.target_rho);
    let mut points: Vec<Option<GroundStateResult>> = (0..9).map(|_| None).collect();
    points[4] = Some(center);

    for i in 0..3usize {
        for j in 0..3usize {
            if i == 1 && j == 1 {
                continue;
            }
            let (dr1, dr2) = ((i as f64 - 1.0) * h, (j as f64 - 1.0) * h);
            let (t1, t2) = (r1 + dr1, r2 + dr2);
            let pj = FieldParams::pair(p.c, p.g, t1, t2);
            let started = Instant::now();
            let solved = match (slope1, slope2) {
                (Some(s1), Some(s2)) => {
                    let mu0 = vec![
                        center_mu[0] + s1 * dr1 + p.g * dr2,
                        center_mu[1] + s2 * dr2 + p.g * dr1,
                    ];
                    minimize_from_seeded(&center_params, &pj, cfg, mu0)
                }
                _ => minimize_from(&center_params, &pj, cfg),
            };
            match solved {
                Ok(res) => {
                    if trace {
                        eprintln!(
                            "stencil ({dr1:+.4},{dr2:+.4}): e0={:.10} e(t)={:.10} conv={} \
                             iters={} {:.1}s",
                            res.observables.e0,
                            energy_at_targets(&res, &pj.target_rho),
                            res.converged,
                            res.iterations,
                            started.elapsed().as_secs_f64()
                        );
                    }
                    if !res.converged {
                        failures.push(format!("(ρ1={t1}, ρ2={t2}): unconverged"));
                    }
                    e_values[i][j] = energy_at_targets(&res, &pj.target_rho);
                    points[3 * i + j] = Some(res);
                }
                Err(err) => failures.push(format!("(ρ1={t1}, ρ2={t2}): {err}")),
            }
        }
    }

    if !failures.is_empty() {
        return Err(Error::StencilError(failures.join("; ")));
    }
    let stencil = EnergySurfaceStencil {
        center: (r1, r2),
        h,
        e_values,
        points: points.into_iter().map(|p| p.expect("all points solved")).collect(),
    };

    // Species-exchange consistency at a symmetric center: mirrored grid
    // points describe the same physical state, so their energies may differ
    // only by solver error.  The optimizer resolves the energy far below its
    // gradient tolerance; `2·grad_tol` relative to the energy scale is a
    // generous ceiling that still catches real asymmetries (which enter at
    // O(h) ≫ grad_tol).
    if (r1 - r2).abs() <= 1e-12 * (r1 + r2) {
        let scale = stencil
            .e_values
            .iter()
            .flatten()
            .fold(1.0f64, |m, e| m.max(e.abs()));
        let tol = 2.0 * cfg.grad_tol * scale;
        let asym = stencil.mirror_asymmetry();
        if asym > tol {
            return Err(Error::StencilError(format!(
                "species-exchange asymmetry {asym:e} exceeds {tol:e} at symmetric center"
            )));
        }
    }
    Ok(stencil)
}

// ---------------------------------------------------------------------------
// Velocities from the optimizer-backed surface
// ---------------------------------------------------------------------------

/// One point of the velocity-versus-coupling curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VelocityPoint {
    /// Interspecies coupling in units of the intraspecies coupling.
    pub g_over_c: f64,
    /// Squared velocity of the in-phase (total-density) mode.
    pub v_plus_sq: f64,
    /// Squared velocity of the out-of-phase (relative-density) mode.
    /// Crosses zero at the demixing transition.
    pub v_minus_sq: f64,
    /// Dimensionless coupling γ = c/ρ at the (per-species) center density.
    pub gamma: f64,
}

/// Stencil step policy for a velocity extraction.
#[derive(Debug, Clone)]
pub struct VelocityConfig {
    /// Density step of the 3×3 stencil.
    pub h: f64,
    /// Halve the step once and Richardson-extrapolate the O(h²) error away.
    /// Costs 8 extra ground-state solves per point; used for reported
    /// curves, skipped for coarse bracketing scans.
    pub richardson: bool,
    /// Ground-state solver settings shared by every stencil point.
    pub optimizer: OptimizerConfig,
}

impl VelocityConfig {
    /// Default step `h = 0.02·ρ` for a per-species density ρ.
    pub fn for_density(rho: f64, optimizer: OptimizerConfig) -> Self {
        VelocityConfig {
            h: DEFAULT_STEP_FRACTION * rho,
            richardson: true,
            optimizer,
        }
    }
}

/// A velocity extraction together with the stencils that produced it.
#[derive(Debug, Clone)]
pub struct VelocityExtraction {
    /// Reported velocities (Richardson-extrapolated when two stencils ran).
    pub point: VelocityPoint,
    /// The underlying stencils, largest step first (`[h]` or `[h, h/2]`).
    pub stencils: Vec<EnergySurfaceStencil>,
}

impl VelocityExtraction {
    /// The ground state at the stencil center.
    pub fn center_result(&self) -> &GroundStateResult {
        self.stencils[0].center_result()
    }

    /// Un-extrapolated `(step, v₊², v₋²)` per stencil level, for step-halving
    /// convergence checks.
    pub fn raw_velocities(&self) -> Vec<(f64, f64, f64)> {
        let rho_plus = self.stencils[0].center.0 + self.stencils[0].center.1;
        self.stencils
            .iter()
            .map(|s| {
                (
                    s.h,
                    2.0 * rho_plus * s.d2_plus(),
                    2.0 * rho_plus * s.d2_minus(),
                )
            })
            .collect()
    }
}

/// Extract `(v₊², v₋²)` at the density center given by `p`'s targets.
///
/// Solves one 3×3 stencil at step `cfg.h` (17 ground states with
/// `richardson`, 9 without — the half-step stencil reuses the same center).
/// The center solve is warm-started from `warm_from` when given, which makes
/// sweeps along a coupling grid pay the cold-start cost only once.
pub fn velocities(
    shape: StateShape,
    p: &FieldParams,
    cfg: &VelocityConfig,
    warm_from: Option<&CmpsParams>,
) -> Result<VelocityExtraction> {
    validate_stencil_inputs(shape, p, cfg.h)?;
    let coarse = energy_stencil(shape, p, cfg.h, &cfg.optimizer, warm_from)?;
    let rho_plus = coarse.center.0 + coarse.center.1;
    let mut stencils = vec![coarse];
    if cfg.richardson {
        let fine = stencil_around(
            stencils[0].center_result().clone(),
            p,
            0.5 * cfg.h,
            &cfg.optimizer,
        )?;
        stencils.push(fine);
    }
    let (dp, dm) = match stencils.as_slice() {
        [coarse, fine] => (
            (4.0 * fine.d2_plus() - coarse.d2_plus()) / 3.0,
            (4.0 * fine.d2_minus() - coarse.d2_minus()) / 3.0,
        ),
        [only] => (only.d2_plus(), only.d2_minus()),
        _ => unreachable!("one or two stencil levels"),
    };
    let rho_mean = 0.5 * rho_plus;
    let point = VelocityPoint {
        g_over_c: p.g / p.c,
        v_plus_sq: 2.0 * rho_plus * dp,
        v_minus_sq: 2.0 * rho_plus * dm,
        gamma: p.c / rho_mean,
    };
    Ok(VelocityExtraction { point, stencils })
}

// ---------------------------------------------------------------------------
// Weak-coupling (bosonization) reference
// ---------------------------------------------------------------------------

/// Weak-coupling bosonization estimates for the relative mode.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeakCouplingEstimate {
    /// `v₋²/v²  =  1 − K·g/(π·v)` with the single-species sound velocity `v`
    /// and Luttinger parameter `K` at `(c, ρ)`.
    pub v_minus_sq_over_v_sq: f64,
    /// Closed-form instability estimate `g* = 2c·(1 − √γ/(2π))`.
    pub g_star: f64,
}

/// Evaluate the weak-coupling estimates at `(c, ρ)` for interspecies
/// coupling `g`.
///
/// Limits: `g = 0` gives ratio exactly 1; `γ → 0` gives `g* → 2c`.
pub fn weak_coupling_estimate(c: f64, rho: f64, g: f64) -> Result<WeakCouplingEstimate> {
    if !(c > 0.0 && rho > 0.0) || !c.is_finite() || !rho.is_finite() {
        return Err(Error::InvalidParameters(
            "weak-coupling estimate requires positive finite c and rho".into(),
        ));
    }
    if !g.is_finite() || g < 0.0 {
        return Err(Error::InvalidParameters(
            "weak-coupling estimate requires finite g >= 0".into(),
        ));
    }
    let gamma = c / rho;
    let point = bethe::lieb_liniger(gamma)?;
    let v = bethe::sound_velocity(c, rho)?;
    Ok(WeakCouplingEstimate {
        v_minus_sq_over_v_sq: 1.0 - point.k_luttinger * g / (PI * v),
        g_star: 2.0 * c * (1.0 - gamma.sqrt() / (2.0 * PI)),
    })
}

// ---------------------------------------------------------------------------
// Transition location
// ---------------------------------------------------------------------------

/// Which detector produced the primary transition estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionMethod {
    /// Sign change of `v₋²` along the coupling grid.
    ZeroCrossing,
    /// Collapse of the interspecies fluctuation `C12(0)` below
    /// [`FLUCTUATION_FLOOR`]·ρ².
    FluctuationVanishing,
}

/// The located mixing/demixing transition.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionReport {
    /// Primary estimate of the transition coupling (units of c).
    pub g_star_over_c: f64,
    /// Grid interval guaranteed to contain the transition; spans both
    /// detectors' brackets when both fired.
    pub bracket: (f64, f64),
    /// Detector behind `g_star_over_c`.
    pub method: TransitionMethod,
    /// Dimensionless coupling γ = c/ρ of the scan.
    pub gamma: f64,
    /// The fluctuation detector's own estimate, when it fired alongside the
    /// zero crossing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fluctuation_onset_over_c: Option<f64>,
}

/// Scan a sorted-by-`g` series for the first sign change `+ → −` and return
/// the linear interpolation of the zero along with its bracketing interval.
fn zero_crossing(series: &[(f64, f64)]) -> Option<(f64, (f64, f64))> {
    series.windows(2).find_map(|w| {
        let ((ga, va), (gb, vb)) = (w[0], w[1]);
        (va > 0.0 && vb <= 0.0).then(|| {
            let g = if vb == 0.0 {
                gb
            } else {
                ga + (gb - ga) * va / (va - vb)
            };
            (g, (ga, gb))
        })
    })
}

/// Locate the transition from a velocity curve and an interspecies
/// fluctuation trace `(g/c, C12(0))`, both over the same coupling window.
///
/// Two detectors run independently: the linear-interpolated zero crossing of
/// `v₋²`, and the onset where `C12(0)` drops below [`FLUCTUATION_FLOOR`]·ρ².
/// When both fire they must agree within the combined bracket, and the zero
/// crossing is reported as primary.  `rho` is the per-species density that
/// normalizes the fluctuation floor.
pub fn locate_transition(
    points: &[VelocityPoint],
    fluct_trace: &[(f64, f64)],
    rho: f64,
) -> Result<TransitionReport> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameters(
            "transition location requires a positive finite density".into(),
        ));
    }
    let mut velocity_series: Vec<(f64, f64)> =
        points.iter().map(|p| (p.g_over_c, p.v_minus_sq)).collect();
    velocity_series.sort_by(|a, b| a.0.total_cmp(&b.0));
    let crossing = zero_crossing(&velocity_series);

    let floor = FLUCTUATION_FLOOR * rho * rho;
    let mut fluct: Vec<(f64, f64)> = fluct_trace.to_vec();
    fluct.sort_by(|a, b| a.0.total_cmp(&b.0));
    let onset = fluct.windows(2).find_map(|w| {
        let ((ga, ca), (gb, cb)) = (w[0], w[1]);
        (ca >= floor && cb < floor).then(|| {
            let g = ga + (gb - ga) * (ca - floor) / (ca - cb);
            (g, (ga, gb))
        })
    });

    let gamma = points.first().map(|p| p.gamma).unwrap_or(f64::NAN);
    match (crossing, onset) {
        (Some((gz, bz)), Some((go, bo))) => {
            // The detectors corroborate each other when they land within
            // one grid cell; compare their separation against the wider of
            // the two individual brackets (the combined bracket would grow
            // with the separation and could never reject anything).
            let cell = (bz.1 - bz.0).max(bo.1 - bo.0);
            if (gz - go).abs() > cell {
                return Err(Error::NoTransitionInRange(format!(
                    "velocity zero crossing at g/c={gz:.4} and fluctuation collapse at \
                     g/c={go:.4} disagree by more than one grid cell ({cell:.4})"
                )));
            }
            let bracket = (bz.0.min(bo.0), bz.1.max(bo.1));
            Ok(TransitionReport {
                g_star_over_c: gz,
                bracket,
                method: TransitionMethod::ZeroCrossing,
                gamma,
                fluctuation_onset_over_c: Some(go),
            })
        }
        (Some((gz, bz)), None) => Ok(TransitionReport {
            g_star_over_c: gz,
            bracket: bz,
            method: TransitionMethod::ZeroCrossing,
            gamma,
            fluctuation_onset_over_c: None,
        }),
        (None, Some((go, bo))) => Ok(TransitionReport {
            g_star_over_c: go,
            bracket: bo,
            method: TransitionMethod::FluctuationVanishing,
            gamma,
            fluctuation_onset_over_c: Some(go),
        }),
        (None, None) => Err(Error::NoTransitionInRange(format!(
            "no v₋² sign change and no C12(0) collapse across {} velocity / {} fluctuation points",
            points.len(),
            fluct_trace.len()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Coupling-grid scan
// ---------------------------------------------------------------------------

/// One row of the velocity-curve result file.
#[derive(Debug, Clone, Serialize)]
pub struct VelocityRow {
    pub g_over_c: f64,
    pub vplus_sq: f64,
    pub vminus_sq: f64,
    /// Weak-coupling estimate of `v₋²` in the same units (single-species
    /// `v²` times the bosonization ratio).
    pub vminus_sq_weak: f64,
    /// Equal-point interspecies fluctuation at the center state.
    pub c12_0: f64,
    pub gamma: f64,
    /// Bond dimension of the per-species matrices.
    pub d: usize,
    /// Number of interspecies coupling channels.
    pub p: usize,
    /// Stencil step used.
    pub h: f64,
}

/// Render velocity rows as CSV (schema:
/// `g_over_c,vplus_sq,vminus_sq,vminus_sq_weak,C12_0,gamma,D,P,h`).
/// Floats print in Rust's shortest round-trip form, so equal inputs produce
/// byte-identical files.
pub fn velocity_csv(rows: &[VelocityRow]) -> String {
    let mut out = String::from("g_over_c,vplus_sq,vminus_sq,vminus_sq_weak,C12_0,gamma,D,P,h\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.g_over_c,
            r.vplus_sq,
            r.vminus_sq,
            r.vminus_sq_weak,
            r.c12_0,
            r.gamma,
            r.d,
            r.p,
            r.h
        )
        .expect("write to string cannot fail");
    }
    out
}

/// The default transition-bracketing grid: g/c from 1.6 to 2.4 in steps of
/// 0.05 (the window where the relative mode softens through zero).
pub fn default_transition_grid() -> Vec<f64> {
    (0..=16).map(|k| 1.6 + 0.05 * k as f64).collect()
}

/// Configuration of a transition scan along a coupling grid.
#[derive(Debug, Clone)]
pub struct TransitionScanConfig {
    /// Variational class (must be a pair shape).
    pub shape: StateShape,
    /// Intraspecies coupling.
    pub c: f64,
    /// Per-species target density.
    pub rho: f64,
    /// Couplings to visit, in units of c; visited in ascending order.
    pub g_over_c_grid: Vec<f64>,
    /// Stencil policy shared by every grid point.
    pub velocity: VelocityConfig,
}

/// A completed transition scan: the velocity curve and the located
/// transition.
#[derive(Debug, Clone)]
pub struct TransitionScan {
    pub rows: Vec<VelocityRow>,
    pub report: TransitionReport,
}

/// Walk the coupling grid in ascending order, extracting velocities and the
/// interspecies fluctuation at every point, then locate the transition with
/// both detectors.
///
/// Each center is warm-started from the previous grid point's center, so
/// only the first point pays a cold-start search.
pub fn transition_scan(cfg: &TransitionScanConfig) -> Result<TransitionScan> {
    if cfg.g_over_c_grid.is_empty() {
        return Err(Error::InvalidParameters(
            "transition scan requires a non-empty coupling grid".into(),
        ));
    }
    let mut grid = cfg.g_over_c_grid.clone();
    grid.sort_by(f64::total_cmp);

    let mut rows = Vec::with_capacity(grid.len());
    let mut points = Vec::with_capacity(grid.len());
    let mut fluct = Vec::with_capacity(grid.len());
    let mut warm: Option<CmpsParams> = None;
    let trace = std::env::var_os("DEMIXER_TRACE_STENCIL").is_some();

    for &g_over_c in &grid {
        let p = FieldParams::symmetric_pair(cfg.c, g_over_c * cfg.c, cfg.rho);
        let started = Instant::now();
        let extraction = velocities(cfg.shape, &p, &cfg.velocity, warm.as_ref())?;
        if trace {
            eprintln!(
                "scan g/c={g_over_c}: v+^2={:.6} v-^2={:.6} {:.1}s",
                extraction.point.v_plus_sq,
                extraction.point.v_minus_sq,
                started.elapsed().as_secs_f64()
            );
        }
        let center = extraction.center_result();
        let c12_0 = center.observables.fluct[(0, 1)];
        let weak = weak_coupling_estimate(cfg.c, cfg.rho, g_over_c * cfg.c)?;
        let v_single = bethe::sound_velocity(cfg.c, cfg.rho)?;
        rows.push(VelocityRow {
            g_over_c,
            vplus_sq: extraction.point.v_plus_sq,
            vminus_sq: extraction.point.v_minus_sq,
            vminus_sq_weak: weak.v_minus_sq_over_v_sq * v_single * v_single,
            c12_0,
            gamma: extraction.point.gamma,
            d: cfg.shape.d(),
            p: match cfg.shape {
                StateShape::Pair { p, .. } => p,
                StateShape::Single { .. } => 0,
            },
            h: cfg.velocity.h,
        });
        fluct.push((g_over_c, c12_0));
        warm = Some(center.state.source().clone());
        points.push(extraction.point);
    }

    let report = locate_transition(&points, &fluct, cfg.rho)?;
    Ok(TransitionScan { rows, report })
}

// ---------------------------------------------------------------------------
// Demixed-phase diagnostics
// ---------------------------------------------------------------------------

/// Quantitative comparison of a demixed ground state against the
/// phase-separated reference: a single gas at doubled density occupying half
/// the volume per species.
#[derive(Debug, Clone, Serialize)]
pub struct DemixedReport {
    /// `C12(0) / ρ²` — vanishes in the demixed phase.
    pub c12_ratio: f64,
    /// `|e0 − e_ref| / e0` against the single-gas energy at density 2ρ.
    pub energy_mismatch: f64,
    /// Worst-species relative gap between `C_αα(0)` and half the single-gas
    /// equal-point fluctuation at density 2ρ (halved because each species
    /// occupies half the volume).
    pub fluct_mismatch: f64,
    /// `min_α max_x C_αα(x) / (2ρ²)` over `x ∈ [0, 10]` — approaches 1 when
    /// the intraspecies correlator builds up its intermediate plateau at the
    /// doubled density before relaxing to ρ².
    pub plateau_ratio: f64,
    /// The single-gas energy reference `e0` at density 2ρ.
    pub reference_energy: f64,
    /// The halved single-gas fluctuation reference at density 2ρ.
    pub reference_fluct: f64,
}

/// Validate a converged state deep in the demixed phase (`g > 2c`) against
/// the phase-separated reference.
pub fn demixed_diagnostics(result: &GroundStateResult, p: &FieldParams) -> Result<DemixedReport> {
    p.validate(2)?;
    if !result.converged {
        return Err(Error::InvalidParameters(
            "demixed diagnostics require a converged ground state".into(),
        ));
    }
    if p.g <= 2.0 * p.c {
        return Err(Error::InvalidParameters(format!(
            "demixed diagnostics apply beyond the transition (g/c > 2); got g/c = {}",
            p.g / p.c
        )));
    }
    let rho = 0.5 * (p.target_rho[0] + p.target_rho[1]);
    let rho_sq = rho * rho;
    let reference_energy = bethe::reference_energy(p.c, 2.0 * rho)?;
    let reference_fluct = 0.5 * bethe::local_pair_correlation(p.c, 2.0 * rho)?;

    let fluct = &result.observables.fluct;
    let c12_ratio = fluct[(0, 1)] / rho_sq;
    let energy_mismatch =
        (result.observables.e0 - reference_energy).abs() / result.observables.e0.abs();
    let fluct_mismatch = (0..2)
        .map(|a| (fluct[(a, a)] - reference_fluct).abs() / reference_fluct)
        .fold(0.0f64, f64::max);

    let xs: Vec<f64> = (0..=40).map(|k| PLATEAU_WINDOW * k as f64 / 40.0).collect();
    let curve = correlation_curve(&result.state, &xs)?;
    let plateau_ratio = (0..2)
        .map(|a| {
            curve
                .values
                .iter()
                .map(|m| m[(a, a)])
                .fold(f64::NEG_INFINITY, f64::max)
                / (2.0 * rho_sq)
        })
        .fold(f64::INFINITY, f64::min);

    Ok(DemixedReport {
        c12_ratio,
        energy_mismatch,
        fluct_mismatch,
        plateau_ratio,
        reference_energy,
        reference_fluct,
    })
}

// ---------------------------------------------------------------------------

//! End-to-end physics validation of the simulator against exactly known
//! results: the Bethe-ansatz oracle for the single-species gas, the
//! demixing transition of the symmetric two-species mixture at g = 2c, the
//! demixed phase's mapping onto a single gas at doubled density, and the
//! internal consistency contracts (variational bound, gradient exactness,
//! transfer fixed-point identities).
//!
//! Heavy ground-state solves are shared between tests through `OnceLock`
//! fixtures; the suite is designed to complete on a single core in well
//! under an hour, with the transition scan dominating.

use demixer::bethe::{self, lieb_liniger};
use demixer::cmps::StateShape;
use demixer::luttinger::{
    demixed_diagnostics, transition_scan, velocities, weak_coupling_estimate, TransitionScan,
    TransitionScanConfig, VelocityConfig,
};
use demixer::observables::{correlation_curve, stationary_data, FieldParams};
use demixer::optimize::{
    fd_gradient, gradient, minimize, minimize_from, objective, random_params, GroundStateResult,
    OptimizerConfig,
};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

const C: f64 = 1.5;
const RHO: f64 = 0.5;
/// Bond dimension for the shared demixed/mixed fixtures.
const FIXTURE_D: usize = 4;

fn base_optimizer(seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        seed,
        max_iters: 6000,
        ..OptimizerConfig::default()
    }
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

/// Demixed states at g/c ∈ {2.1, 2.4, 2.7, 3.0}, warm-chained in ascending
/// coupling at the fixture bond dimension.
fn demixed_chain() -> &'static Vec<(f64, FieldParams, GroundStateResult)> {
    static CHAIN: OnceLock<Vec<(f64, FieldParams, GroundStateResult)>> = OnceLock::new();
    CHAIN.get_or_init(|| {
        let cfg = base_optimizer(7);
        let shape = StateShape::Pair { d: FIXTURE_D, p: 1 };
        let mut out = Vec::new();
        let mut warm: Option<GroundStateResult> = None;
        for g_over_c in [2.1, 2.4, 2.7, 3.0] {
            let p = FieldParams::symmetric_pair(C, g_over_c * C, RHO);
            let res = match &warm {
                Some(prev) => minimize_from(prev.state.source(), &p, &cfg),
                None => minimize(shape, &p, &cfg),
            }
            .unwrap_or_else(|e| panic!("demixed solve at g/c={g_over_c} failed: {e}"));
            warm = Some(res.clone());
            out.push((g_over_c, p, res));
        }
        out
    })
}

/// Miscible-phase states at g/c ∈ {0.52, 1.0}, with the density targeting
/// tightened so that correlation asymptotes land on the nominal ρ².
fn mixed_states() -> &'static Vec<(f64, FieldParams, GroundStateResult)> {
    static MIXED: OnceLock<Vec<(f64, FieldParams, GroundStateResult)>> = OnceLock::new();
    MIXED.get_or_init(|| {
        let cfg = OptimizerConfig {
            mu_tol: 2e-4,
            ..base_optimizer(7)
        };
        let shape = StateShape::Pair { d: FIXTURE_D, p: 1 };
        [0.52, 1.0]
            .into_iter()
            .map(|g_over_c| {
                let p = FieldParams::symmetric_pair(C, g_over_c * C, RHO);
                let res = minimize(shape, &p, &cfg)
                    .unwrap_or_else(|e| panic!("mixed solve at g/c={g_over_c} failed: {e}"));
                assert!(res.converged, "mixed fixture at g/c={g_over_c} unconverged");
                (g_over_c, p, res)
            })
            .collect()
    })
}

/// The reduced transition scan at γ = 3 (five points, no step halving).
fn gamma3_scan() -> &'static (TransitionScan, f64) {
    static SCAN: OnceLock<(TransitionScan, f64)> = OnceLock::new();
    SCAN.get_or_init(|| {
        let cfg = TransitionScanConfig {
            shape: StateShape::Pair { d: 5, p: 1 },
            c: C,
            rho: RHO,
            g_over_c_grid: vec![1.6, 1.8, 2.0, 2.2, 2.4],
            velocity: VelocityConfig {
                richardson: false,
                ..VelocityConfig::for_density(RHO, base_optimizer(7))
            },
        };
        let started = Instant::now();
        let scan = transition_scan(&cfg).expect("transition scan at gamma=3");
        (scan, started.elapsed().as_secs_f64())
    })
}

// ---------------------------------------------------------------------------
// Single-species validation against the oracle
// ---------------------------------------------------------------------------

/// At D = 8 the variational energy density matches the Bethe ansatz to
/// 1e-3 relative across weak, intermediate, and strong coupling, with each
/// point solved in minutes.
#[test]
fn single_species_energy_matches_bethe_oracle_at_high_bond_dimension() {
    for gamma in [0.52, 1.5, 3.0] {
        let rho = C / gamma;
        let p = FieldParams::single(C, rho);
        let cfg = OptimizerConfig {
            restarts: 3,
            ..base_optimizer(3)
        };
        let started = Instant::now();
        let res = minimize(StateShape::Single { d: 8 }, &p, &cfg).expect("single-species solve");
        let elapsed = started.elapsed().as_secs_f64();
        let reference = bethe::reference_energy(C, rho).expect("oracle");
        let rel = (res.observables.e0 - reference) / reference;
        println!(
            "gamma={gamma}: e0={:.10} ref={reference:.10} rel={rel:.2e} conv={} {elapsed:.0}s",
            res.observables.e0, res.converged
        );
        assert!(res.converged, "gamma={gamma}: did not converge");
        assert!(
            rel.abs() <= 1e-3,
            "gamma={gamma}: relative error {rel:.2e} exceeds 1e-3"
        );
        assert!(
            elapsed < 600.0,
            "gamma={gamma}: solve took {elapsed:.0}s (budget 600s)"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 8,
        max_shrink_iters: 0,
        ..ProptestConfig::default()
    })]

    /// The variational principle: no cMPS energy density, converged or
    /// not, may undercut the exact ground-state energy at the density the
    /// state actually carries (beyond 1e-9 arithmetic noise).
    #[test]
    fn variational_energy_never_undercuts_the_exact_bound(
        c in 0.3f64..3.0,
        rho in 0.3f64..1.5,
        d in 2usize..=3,
        seed in any::<u64>(),
    ) {
        let p = FieldParams::single(c, rho);
        let cfg = OptimizerConfig {
            seed,
            restarts: 1,
            max_iters: 600,
            grad_tol: 1e-5,
            ..OptimizerConfig::default()
        };
        let res = minimize(StateShape::Single { d }, &p, &cfg).expect("solve");
        let rho_achieved = res.observables.rho[0];
        prop_assume!(rho_achieved > 1e-3);
        let reference = bethe::reference_energy(c, rho_achieved).expect("oracle");
        prop_assert!(
            res.observables.e0 >= reference - 1e-9,
            "e0 = {} undercuts the exact bound {} at c={c}, rho={rho_achieved}",
            res.observables.e0,
            reference
        );
    }
}

// ---------------------------------------------------------------------------
// Oracle self-checks
// ---------------------------------------------------------------------------

/// Tonks-Girardeau limit, weak-coupling expansion, and the Luttinger
/// relation v·K = 2πρ.
#[test]
fn oracle_reproduces_known_limits_and_luttinger_relation() {
    let tonks = lieb_liniger(1e4).expect("oracle at gamma=1e4");
    let free_fermion = PI * PI / 3.0;
    assert!(
        ((tonks.e - free_fermion) / free_fermion).abs() < 2e-3,
        "e(1e4) = {} vs π²/3 = {free_fermion}",
        tonks.e
    );

    let gamma = 0.01;
    let weak = lieb_liniger(gamma).expect("oracle at gamma=0.01");
    let expansion = gamma - 4.0 * gamma.powf(1.5) / (3.0 * PI);
    assert!(
        ((weak.e - expansion) / expansion).abs() < 1e-2,
        "e(0.01) = {} vs expansion {expansion}",
        weak.e
    );

    // v·K = 2πρ across four decades of interaction strength and several
    // densities.
    for gamma in [0.01, 0.1, 1.0, 10.0, 100.0] {
        for rho in [0.5, 1.0, 2.0] {
            let c = gamma * rho;
            let sol = lieb_liniger(gamma).expect("oracle");
            let v = bethe::sound_velocity(c, rho).expect("sound velocity");
            let rel = (v * sol.k_luttinger - 2.0 * PI * rho) / (2.0 * PI * rho);
            assert!(
                rel.abs() <= 1e-6,
                "v·K/2πρ − 1 = {rel:.2e} at gamma={gamma}, rho={rho}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Transition location
// ---------------------------------------------------------------------------

/// A five-point coupling scan at D = 5 brackets the demixing transition
/// within ±0.2 of g/c = 2 in under half an hour, the out-of-phase velocity
/// falling monotonically through zero while the in-phase one stays finite.
#[test]
fn reduced_scan_brackets_the_demixing_transition() {
    let (scan, elapsed) = gamma3_scan();
    for row in &scan.rows {
        println!(
            "g/c={:.2}: v+²={:.4} v-²={:.4} C12(0)/ρ²={:.3}",
            row.g_over_c,
            row.vplus_sq,
            row.vminus_sq,
            row.c12_0 / (RHO * RHO)
        );
    }
    let report = &scan.report;
    println!(
        "transition: g*/c = {:.4}, bracket [{:.2}, {:.2}], {elapsed:.0}s",
        report.g_star_over_c, report.bracket.0, report.bracket.1
    );

    assert!(
        (report.g_star_over_c - 2.0).abs() <= 0.2,
        "crossing at g*/c = {} is outside 2.0 ± 0.2",
        report.g_star_over_c
    );
    assert!(
        report.bracket.0 >= 1.6 && report.bracket.1 <= 2.4,
        "bracket {:?} not inside the scan window",
        report.bracket
    );
    assert!(
        *elapsed < 1800.0,
        "reduced scan took {elapsed:.0}s (budget 1800s)"
    );

    // v₋² decreases toward the transition; v₊² stays away from zero.
    let vm: Vec<f64> = scan.rows.iter().map(|r| r.vminus_sq).collect();
    assert!(
        vm.windows(2).all(|w| w[1] < w[0]),
        "v-² not monotonically decreasing: {vm:?}"
    );
    assert!(
        scan.rows.iter().all(|r| r.vplus_sq > 0.5),
        "in-phase mode softened unexpectedly"
    );
}

/// The crossing in g/c units does not move with the interaction strength:
/// scans at γ = 3 and γ = 0.52 agree within 0.1.
#[test]
fn transition_location_is_interaction_strength_independent() {
    let (scan3, _) = gamma3_scan();

    // γ = c/ρ = 0.52 with the same per-species density.
    let c_weak = 0.52 * RHO;
    let cfg = TransitionScanConfig {
        shape: StateShape::Pair { d: 5, p: 1 },
        c: c_weak,
        rho: RHO,
        g_over_c_grid: vec![1.6, 1.8, 2.0, 2.2, 2.4],
        velocity: VelocityConfig {
            richardson: false,
            ..VelocityConfig::for_density(RHO, base_optimizer(7))
        },
    };
    let scan_weak = transition_scan(&cfg).expect("transition scan at gamma=0.52");
    let (g3, gw) = (
        scan3.report.g_star_over_c,
        scan_weak.report.g_star_over_c,
    );
    println!("crossing: gamma=3.0 → g*/c={g3:.4};  gamma=0.52 → g*/c={gw:.4}");
    assert!(
        (g3 - gw).abs() < 0.1,
        "crossing moved with interaction strength: {g3:.4} vs {gw:.4}"
    );
}

// ---------------------------------------------------------------------------
// Demixed phase
// ---------------------------------------------------------------------------

/// Deep in the demixed phase the mixture pays the energy of a single gas
/// at twice the density: e0 matches ρ³·8·e(c/2ρ) within 1%.
#[test]
fn demixed_energy_matches_single_gas_at_double_density() {
    let p = FieldParams::symmetric_pair(C, 2.5 * C, RHO);
    let res = minimize(StateShape::Pair { d: 5, p: 1 }, &p, &base_optimizer(7))
        .expect("demixed solve at D=5");
    let reference = bethe::reference_energy(C, 2.0 * RHO).expect("oracle at 2ρ");
    let rel = (res.observables.e0 - reference) / res.observables.e0;
    println!(
        "demixed D=5: e0={:.8} ref={reference:.8} rel={rel:.2e} conv={} iters={}",
        res.observables.e0, res.converged, res.iterations
    );
    assert!(
        rel.abs() <= 1e-2,
        "demixed energy off the doubled-density gas by {rel:.2e} (> 1e-2)"
    );
}

/// Once demixed, the energy no longer depends on the interspecies
/// coupling: the two species have stopped overlapping, so g multiplies a
/// vanishing density product.
#[test]
fn demixed_energy_is_flat_in_the_coupling() {
    let energies: Vec<f64> = demixed_chain()
        .iter()
        .map(|(_, _, r)| r.observables.e0)
        .collect();
    let (lo, hi) = (
        energies.iter().cloned().fold(f64::INFINITY, f64::min),
        energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let spread = (hi - lo) / (0.5 * (hi + lo));
    println!("demixed chain energies: {energies:?} → relative spread {spread:.2e}");
    assert!(
        spread <= 1e-2,
        "e0 varies by {spread:.2e} over g/c ∈ [2.1, 3.0]"
    );
}

// ---------------------------------------------------------------------------
// Fluctuation collapse
// ---------------------------------------------------------------------------

/// The local interspecies fluctuation C12(0) is of order ρ² in the mixed
/// phase and collapses below 1e-3·ρ² everywhere past the transition.
#[test]
fn interspecies_fluctuations_collapse_across_the_transition() {
    let floor = 1e-3 * RHO * RHO;
    for (g_over_c, _, res) in demixed_chain() {
        let c12 = res.observables.fluct[(0, 1)];
        println!("g/c={g_over_c}: C12(0)/ρ² = {:.2e}", c12 / (RHO * RHO));
        assert!(
            c12 <= floor,
            "C12(0) = {c12:.2e} above the collapse floor at g/c={g_over_c}"
        );
    }
    for (g_over_c, _, res) in mixed_states() {
        let c12 = res.observables.fluct[(0, 1)];
        println!("g/c={g_over_c}: C12(0)/ρ² = {:.3}", c12 / (RHO * RHO));
        assert!(
            c12 >= 0.5 * RHO * RHO,
            "mixed phase lost its interspecies overlap at g/c={g_over_c}: C12(0) = {c12:.3e}"
        );
    }
}

// ---------------------------------------------------------------------------
// Correlation structure
// ---------------------------------------------------------------------------

/// Miscible phase: every density-density correlation has saturated at ρ²
/// (to 1e-3·ρ²) by distance x = 30.
#[test]
fn mixed_phase_correlations_saturate_at_density_squared() {
    let (_, _, res) = &mixed_states()[0]; // g/c = 0.52
    let curve = correlation_curve(&res.state, &[30.0]).expect("correlation curve");
    let target = RHO * RHO;
    for a in 0..2 {
        for b in 0..2 {
            let v = curve.values[0][(a, b)];
            assert!(
                (v - target).abs() <= 1e-3 * target,
                "C{}{}(30) = {v:.8} not within 1e-3·ρ² of ρ² = {target}",
                a + 1,
                b + 1
            );
        }
    }
}

/// Demixed phase at g/c = 2.53: the same-species correlation shows the
/// doubled-density plateau (≥ 1.8ρ² within x ∈ [0, 10]) and the
/// interspecies correlation stays suppressed below 0.9ρ² out to x = 10³
/// (the correlation length of the symmetry-broken state is macroscopic).
#[test]
fn demixed_phase_correlations_show_plateau_and_suppressed_overlap() {
    let p = FieldParams::symmetric_pair(C, 2.53 * C, RHO);
    let warm = &demixed_chain()[1].2; // g/c = 2.4, nearest chain point
    let cfg = base_optimizer(7);
    let res = minimize_from(warm.state.source(), &p, &cfg).expect("demixed solve at 2.53");

    let diag = demixed_diagnostics(&res, &p).expect("demixed diagnostics");
    println!(
        "g/c=2.53: C12(0)/ρ²={:.2e} plateau={:.4} energy mismatch={:.2e}",
        diag.c12_ratio,
        2.0 * diag.plateau_ratio,
        diag.energy_mismatch
    );
    assert!(
        2.0 * diag.plateau_ratio >= 1.8,
        "same-species plateau only reaches {:.3}ρ² (< 1.8ρ²)",
        2.0 * diag.plateau_ratio
    );

    // Log-spaced distances out to 10³.
    let n = 40;
    let xs: Vec<f64> = (0..=n)
        .map(|k| 0.1 * (1e3f64 / 0.1).powf(k as f64 / n as f64))
        .collect();
    let curve = correlation_curve(&res.state, &xs).expect("correlation curve");
    for (k, x) in xs.iter().enumerate() {
        let c12 = curve.values[k][(0, 1)];
        assert!(
            c12 < 0.9 * RHO * RHO,
            "C12({x:.1}) = {c12:.4e} recovered above 0.9ρ² before x = 10³"
        );
    }
}

// ---------------------------------------------------------------------------
// Gradient correctness
// ---------------------------------------------------------------------------

/// The analytic gradient agrees with central finite differences to 1e-6
/// absolute, on random parameter points of both topologies.
#[test]
fn analytic_gradient_matches_finite_differences_on_random_points() {
    let mut checked = 0usize;
    let mut seed = 0u64;
    while checked < 20 {
        seed += 1;
        let (shape, p, mu): (StateShape, FieldParams, Vec<f64>) = if checked % 2 == 0 {
            let d = 2 + (checked / 2) % 2; // alternate D = 2, 3
            (
                StateShape::Single { d },
                FieldParams::single(1.2, 0.8),
                vec![0.4],
            )
        } else {
            let d = 2 + (checked / 2) % 2;
            (
                StateShape::Pair { d, p: 1 },
                FieldParams::symmetric_pair(1.5, 0.9, 0.5),
                vec![0.7, 0.3],
            )
        };
        let params = random_params(shape, &p, 0.2, seed).expect("draw");
        let Ok(ev) = objective(&params, &p, &mu) else {
            continue;
        };
        if ev.penalized {
            continue; // non-injective draw: gradient is a penalty constant
        }
        let analytic = gradient(&params, &p, &mu, 1e-5).expect("analytic gradient");
        assert!(
            !analytic.used_fd,
            "analytic path fell back to finite differences on seed {seed}"
        );
        let numeric = fd_gradient(&params, &p, &mu, 1e-5).expect("fd gradient");
        assert_eq!(analytic.grad.len(), numeric.len());
        let worst = analytic
            .grad
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0f64, f64::max);
        assert!(
            worst <= 1e-6,
            "gradient mismatch {worst:.2e} on seed {seed} ({shape:?})"
        );
        checked += 1;
    }
}

// ---------------------------------------------------------------------------
// Fixed-point identities
// ---------------------------------------------------------------------------

/// Every converged state satisfies the transfer-generator contracts:
/// vec(I) is a left null vector, r a right null vector (both to 1e-10
/// relative to ‖T‖), the pair is trace-normalized, and r is positive
/// semidefinite to −1e-10.
#[test]
fn converged_states_satisfy_fixed_point_identities() {
    let mut states: Vec<(String, &GroundStateResult)> = Vec::new();
    for (g, _, r) in demixed_chain() {
        states.push((format!("demixed g/c={g}"), r));
    }
    for (g, _, r) in mixed_states() {
        states.push((format!("mixed g/c={g}"), r));
    }

    for (label, res) in states {
        let data = stationary_data(&res.state).expect("stationary data");
        assert!(
            data.left_identity_residual <= 1e-10,
            "{label}: left-gauge residual {:.2e}",
            data.left_identity_residual
        );
        assert!(
            data.stationarity_residual <= 1e-10,
            "{label}: stationarity residual {:.2e}",
            data.stationarity_residual
        );

        // Tr[l·r] = 1 after normalization (exact to double rounding).
        let n = data.l.nrows();
        let mut trace = num_complex::Complex64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                trace += data.l[(i, j)] * data.r[(j, i)];
            }
        }
        assert!(
            (trace.re - 1.0).abs() <= 1e-13 && trace.im.abs() <= 1e-13,
            "{label}: Tr[l·r] = {trace}"
        );

        // r is Hermitian PSD up to strict numerical tolerance.
        let spec = demixer::linalg::eig(&data.r).expect("eig of r");
        for z in spec.values.iter() {
            assert!(
                z.re >= -1e-10 && z.im.abs() <= 1e-10,
                "{label}: r has eigenvalue {z}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Weak-coupling estimate
// ---------------------------------------------------------------------------

/// The linear-response instability estimate: its closed-form crossing
/// g* = 2c(1 − √γ/2π) is reproduced bit for bit, and it is conservative —
/// at the estimated instability the measured out-of-phase velocity is
/// still finite, the true transition sitting later (at g = 2c).
#[test]
fn weak_coupling_formula_is_exact_and_conservative() {
    let (c, rho) = (1.5, 0.63);
    let gamma: f64 = c / rho;
    let est = weak_coupling_estimate(c, rho, 0.0).expect("estimate");
    let closed_form = 2.0 * c * (1.0 - gamma.sqrt() / (2.0 * PI));
    assert_eq!(est.g_star, closed_form, "closed form mismatch");
    assert!(
        est.g_star < 2.0 * c,
        "weak-coupling crossing must sit strictly below the exact one"
    );

    // Solve the mixture exactly at the estimated instability point: the
    // true v₋² has not yet crossed zero there.
    let p = FieldParams::symmetric_pair(c, est.g_star, rho);
    let cfg = VelocityConfig {
        richardson: false,
        ..VelocityConfig::for_density(rho, base_optimizer(7))
    };
    let ext = velocities(StateShape::Pair { d: 4, p: 1 }, &p, &cfg, None)
        .expect("stencil at the weak-coupling crossing");
    println!(
        "gamma={gamma:.3}: weak crossing g*/c={:.4}, measured v-² there = {:.4}",
        est.g_star / c,
        ext.point.v_minus_sq
    );
    assert!(
        ext.point.v_minus_sq > 0.0,
        "v-² already negative at the weak-coupling estimate: the estimate is not conservative"
    );
}

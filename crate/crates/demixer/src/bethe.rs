//! Ground-truth solver for the single-species repulsive Bose gas in one
//! dimension (Lieb-Liniger model) in units ħ = 2m = 1.
//!
//! The ground-state energy density is `e0 = ρ³·e(γ)` with `γ = c/ρ`. The
//! dimensionless function `e(γ)` follows from the Lieb integral equation for
//! the quasi-momentum distribution `f(k)` on `[−B, B]`:
//!
//! ```text
//! g(t) = 1/2π + (1/π) ∫₋₁¹ λ·g(s) / (λ² + (t−s)²) ds,   λ = c/B,
//! ```
//!
//! written here in rescaled variables `k = B·t`. Given the solution,
//! `ρ = B·∫g`, `γ = λ/∫g`, and `e(γ) = ∫t²g / (∫g)³`.
//!
//! Discretization: Nyström with Gauss-Legendre nodes. The Lorentzian kernel
//! sharpens as λ → 0 (weak coupling), so the singular part is subtracted
//! analytically — `∫K(t,s)g(s)ds = g(t)·∫K(t,s)ds + ∫K(t,s)[g(s)−g(t)]ds`
//! with the first integral in closed form — leaving a smooth residual
//! integrand; a resolution floor on the node count keeps several quadrature
//! nodes per kernel width. The cutoff `B` is matched to the requested γ by a
//! safeguarded secant iteration.
//!
//! Everything is computed at ρ = 1 and rescaled by the cubic law
//! `e0(c, ρ) = ρ³ e(c/ρ)`; sound velocity and Luttinger parameter follow
//! from γ-derivatives of `e` via
//! `v² = 2ρ·∂²e0/∂ρ² = 2ρ²(6e − 4γe′ + γ²e″)` and `K = 2πρ/v`.

use gauss_quad::GaussLegendre;
use ndarray::Array2;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{OnceLock, RwLock};

use crate::error::{Error, Result};
use crate::linalg::solve_real;

/// Default Gauss-Legendre node count for the Nyström discretization.
pub const DEFAULT_NODES: usize = 128;

/// Resolution floor: keep at least ~8 quadrature nodes per Lorentzian
/// half-width λ (interior Gauss-Legendre spacing is ≈ π/n), so the node
/// count is raised to `RESOLUTION_FLOOR_FACTOR / λ` when the requested
/// count is coarser. Capped to keep degenerate inputs from exploding.
const RESOLUTION_FLOOR_FACTOR: f64 = 24.0;
const MAX_NODES: usize = 4096;

/// Relative step of the log-γ stencil used for e′ and e″.
const LOG_GAMMA_STEP: f64 = 1e-3;

/// Convergence target of the cutoff root-find, relative in γ.
const GAMMA_MATCH_TOL: f64 = 1e-13;

/// Single-species Bethe-ansatz ground-state data at one value of γ = c/ρ.
///
/// `v` and `k_luttinger` are quoted at ρ = 1; at density ρ the velocity is
/// `ρ·v` and K is unchanged (it depends on γ only).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LiebLinigerPoint {
    pub gamma: f64,
    /// Dimensionless ground-state energy, e0 = ρ³·e(γ). Bounded by the
    /// free-fermion value π²/3.
    pub e: f64,
    /// de/dγ.
    pub e_prime: f64,
    /// d²e/dγ².
    pub e_double_prime: f64,
    /// Sound velocity at ρ = 1 (multiply by ρ for general density).
    pub v: f64,
    /// Luttinger parameter K = 2πρ/v; dimensionless, ≥ 1, → 1 as γ → ∞.
    pub k_luttinger: f64,
}

/// Solution of the integral equation at fixed Lorentzian width λ = c/B.
struct LiebSolution {
    /// ∫₋₁¹ g(t) dt
    norm: f64,
    /// ∫₋₁¹ t²·g(t) dt
    second_moment: f64,
}

fn node_count_for(requested: usize, lambda: f64) -> usize {
    let floor = (RESOLUTION_FLOOR_FACTOR / lambda).ceil();
    let floor = if floor.is_finite() { floor as usize } else { MAX_NODES };
    requested.max(floor).min(MAX_NODES)
}

/// Closed form of `(1/π)∫₋₁¹ λ/(λ² + (t−s)²) ds`.
fn lorentzian_mass(t: f64, lambda: f64) -> f64 {
    (((1.0 + t) / lambda).atan() + ((1.0 - t) / lambda).atan()) / PI
}

/// Solve the Nyström system at fixed λ with the subtracted (regularized)
/// kernel and return the two moments of g needed downstream.
fn solve_lieb_equation(lambda: f64, nodes: &[(f64, f64)]) -> Result<LiebSolution> {
    let n = nodes.len();
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let (ti, _) = nodes[i];
        let mut diag = 1.0 - lorentzian_mass(ti, lambda);
        for j in 0..n {
            if j == i {
                continue;
            }
            let (tj, wj) = nodes[j];
            let kernel = lambda / (lambda * lambda + (ti - tj) * (ti - tj)) / PI;
            a[(i, j)] = -wj * kernel;
            diag += wj * kernel;
        }
        a[(i, i)] += diag;
    }
    let rhs = vec![0.5 / PI; n];
    let g = solve_real(&a, &rhs).map_err(|err| Error::OracleError {
        gamma: f64::NAN,
        message: format!("Nystrom solve failed at lambda={lambda}: {err}"),
    })?;

    let mut norm = 0.0;
    let mut second_moment = 0.0;
    for (j, &(tj, wj)) in nodes.iter().enumerate() {
        norm += wj * g[j];
        second_moment += wj * tj * tj * g[j];
    }
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::OracleError {
            gamma: f64::NAN,
            message: format!("non-positive distribution norm {norm} at lambda={lambda}"),
        });
    }
    Ok(LiebSolution {
        norm,
        second_moment,
    })
}

fn legendre_nodes(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(n.try_into().expect("node count is positive"));
    rule.as_node_weight_pairs().to_vec()
}

/// γ produced by a given λ: γ = λ / ∫g.
fn gamma_of_lambda(lambda: f64, requested_nodes: usize) -> Result<(f64, LiebSolution)> {
    let nodes = legendre_nodes(node_count_for(requested_nodes, lambda));
    let sol = solve_lieb_equation(lambda, &nodes)?;
    Ok((lambda / sol.norm, sol))
}

/// Dimensionless energy from a solved point: e = ∫t²g / (∫g)³.
fn energy_of(sol: &LiebSolution) -> f64 {
    sol.second_moment / (sol.norm * sol.norm * sol.norm)
}

/// Solve for e(γ) at one γ: root-find the Lorentzian width λ (equivalently
/// the cutoff B = c/λ) so the integral-equation solution reproduces γ.
fn energy_at_gamma(gamma: f64, requested_nodes: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::OracleError {
            gamma,
            message: "gamma must be positive and finite".into(),
        });
    }

    // Two complementary starting estimates for λ(γ): the Tonks regime has
    // B ≈ πρ hence λ ≈ γ/π; the weak-coupling (semicircle) regime has
    // B ≈ 2√γ·ρ hence λ ≈ √γ/2.
    let est_tonks = gamma / PI;
    let est_weak = 0.5 * gamma.sqrt();
    let mut lo = est_tonks.min(est_weak) * 0.25;
    let mut hi = est_tonks.max(est_weak) * 4.0;

    // γ(λ) is increasing; expand the bracket geometrically if needed.
    let mut f_lo = gamma_of_lambda(lo, requested_nodes)?.0 - gamma;
    let mut f_hi = gamma_of_lambda(hi, requested_nodes)?.0 - gamma;
    let mut expansions = 0;
    while f_lo > 0.0 && expansions < 60 {
        lo *= 0.25;
        f_lo = gamma_of_lambda(lo, requested_nodes)?.0 - gamma;
        expansions += 1;
    }
    while f_hi < 0.0 && expansions < 120 {
        hi *= 4.0;
        f_hi = gamma_of_lambda(hi, requested_nodes)?.0 - gamma;
        expansions += 1;
    }
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::OracleError {
            gamma,
            message: format!(
                "failed to bracket the cutoff: lambda in [{lo:e}, {hi:e}] gives gamma offsets [{f_lo:e}, {f_hi:e}]"
            ),
        });
    }

    // Safeguarded secant (falls back to bisection whenever the secant step
    // leaves the bracket or stalls).
    let mut best: Option<(f64, LiebSolution)> = None;
    for _ in 0..200 {
        let mid = if f_hi != f_lo {
            let secant = lo - f_lo * (hi - lo) / (f_hi - f_lo);
            if secant > lo && secant < hi {
                secant
            } else {
                0.5 * (lo + hi)
            }
        } else {
            0.5 * (lo + hi)
        };
        let (gamma_mid, sol) = gamma_of_lambda(mid, requested_nodes)?;
        let f_mid = gamma_mid - gamma;
        let done = f_mid.abs() <= GAMMA_MATCH_TOL * gamma;
        best = Some((mid, sol));
        if done {
            break;
        }
        if f_mid < 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
        if (hi - lo) <= 1e-15 * hi {
            break;
        }
    }
    let (_, sol) = best.ok_or_else(|| Error::OracleError {
        gamma,
        message: "cutoff iteration produced no solution".into(),
    })?;
    Ok(energy_of(&sol))
}

fn cache() -> &'static RwLock<HashMap<(u64, usize), LiebLinigerPoint>> {
    static CACHE: OnceLock<RwLock<HashMap<(u64, usize), LiebLinigerPoint>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Full Bethe-ansatz point at coupling γ with an explicit node budget.
///
/// Derivatives use a Richardson-extrapolated central-difference stencil in
/// ln γ (the natural variable: e spans γ ∈ [0.01, 10⁴] smoothly in log
/// scale). Results are memoized by (γ, node count); the cache is shared and
/// safe for concurrent readers.
pub fn lieb_liniger_with_nodes(gamma: f64, requested_nodes: usize) -> Result<LiebLinigerPoint> {
    let key = (gamma.to_bits(), requested_nodes);
    if let Some(hit) = cache().read().expect("oracle cache poisoned").get(&key) {
        return Ok(*hit);
    }

    let e0 = energy_at_gamma(gamma, requested_nodes)?;

    // Central differences in x = ln γ at steps h and h/2, Richardson
    // combined: first derivative error O(h⁴), second O(h⁴).
    let h = LOG_GAMMA_STEP;
    let eval = |dx: f64| energy_at_gamma(gamma * dx.exp(), requested_nodes);
    let ep1 = eval(h)?;
    let em1 = eval(-h)?;
    let ep2 = eval(0.5 * h)?;
    let em2 = eval(-0.5 * h)?;

    let d1_h = (ep1 - em1) / (2.0 * h);
    let d1_h2 = (ep2 - em2) / h;
    let de_dx = (4.0 * d1_h2 - d1_h) / 3.0;

    let d2_h = (ep1 - 2.0 * e0 + em1) / (h * h);
    let d2_h2 = (ep2 - 2.0 * e0 + em2) / (0.25 * h * h);
    let d2e_dx2 = (4.0 * d2_h2 - d2_h) / 3.0;

    // Chain rule from x = ln γ to γ.
    let e_prime = de_dx / gamma;
    let e_double_prime = (d2e_dx2 - de_dx) / (gamma * gamma);

    // v² = 2ρ·∂²e0/∂ρ² at ρ = 1, expressed through γ-derivatives of e.
    let v_sq = 2.0 * (6.0 * e0 - 4.0 * gamma * e_prime + gamma * gamma * e_double_prime);
    if !(v_sq > 0.0) {
        return Err(Error::OracleError {
            gamma,
            message: format!("non-positive squared sound velocity {v_sq}"),
        });
    }
    let v = v_sq.sqrt();
    let point = LiebLinigerPoint {
        gamma,
        e: e0,
        e_prime,
        e_double_prime,
        v,
        k_luttinger: 2.0 * PI / v,
    };
    cache()
        .write()
        .expect("oracle cache poisoned")
        .insert(key, point);
    Ok(point)
}

/// Full Bethe-ansatz point at coupling γ with the default node budget.
pub fn lieb_liniger(gamma: f64) -> Result<LiebLinigerPoint> {
    lieb_liniger_with_nodes(gamma, DEFAULT_NODES)
}

/// Ground-state energy density of a single gas at interaction `c` and
/// density `rho`: `e0 = ρ³·e(c/ρ)`.
pub fn reference_energy(c: f64, rho: f64) -> Result<f64> {
    reference_energy_with_nodes(c, rho, DEFAULT_NODES)
}

/// [`reference_energy`] with an explicit node budget (used by the
/// self-convergence checks).
pub fn reference_energy_with_nodes(c: f64, rho: f64, nodes: usize) -> Result<f64> {
    if !(c > 0.0 && rho > 0.0) {
        return Err(Error::OracleError {
            gamma: if rho > 0.0 { c / rho } else { f64::NAN },
            message: "reference energy needs c > 0 and rho > 0".into(),
        });
    }
    Ok(rho.powi(3) * lieb_liniger_with_nodes(c / rho, nodes)?.e)
}

/// Chemical potential of the single gas: μ = ∂e0/∂ρ = 3ρ²e − cρe′.
pub fn chemical_potential(c: f64, rho: f64) -> Result<f64> {
    let pt = lieb_liniger(c / rho)?;
    Ok(3.0 * rho * rho * pt.e - c * rho * pt.e_prime)
}

/// Sound velocity at interaction `c` and density `rho` (v scales linearly
/// with ρ at fixed γ).
pub fn sound_velocity(c: f64, rho: f64) -> Result<f64> {
    Ok(rho * lieb_liniger(c / rho)?.v)
}

/// Local pair correlation of the single gas,
/// `⟨ψ†ψ†ψψ⟩ = ∂e0/∂c = ρ²e′(γ)` (Hellmann-Feynman).
pub fn local_pair_correlation(c: f64, rho: f64) -> Result<f64> {
    Ok(rho * rho * lieb_liniger(c / rho)?.e_prime)
}

/// Render a γ-table as CSV with full-precision columns
/// `gamma,e,e_prime,e_double_prime,v_over_rho,K`.
pub fn gamma_table_csv(gammas: &[f64], nodes: usize) -> Result<String> {
    let mut out = String::from("gamma,e,e_prime,e_double_prime,v_over_rho,K\n");
    for &gamma in gammas {
        let p = lieb_liniger_with_nodes(gamma, nodes)?;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_f64(gamma),
            fmt_f64(p.e),
            fmt_f64(p.e_prime),
            fmt_f64(p.e_double_prime),
            fmt_f64(p.v),
            fmt_f64(p.k_luttinger),
        ));
    }
    Ok(out)
}

/// Shortest round-trip float formatting (Rust's default `Display` for f64
/// prints the shortest string that parses back to the same bits).
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tonks_limit_energy() {
        // γ → ∞ approaches the free-fermion value π²/3; at γ = 10⁴ the
        // 1/γ corrections are at the 4e-4 level.
        let e = lieb_liniger(1e4).unwrap().e;
        let tonks = PI * PI / 3.0;
        assert!(
            (e - tonks).abs() / tonks < 2e-3,
            "e(1e4) = {e}, expected within 0.2% of {tonks}"
        );
        // Known first correction: e ≈ π²/3 · (1 − 4/γ).
        let corrected = tonks * (1.0 - 4.0 / 1e4);
        assert!((e - corrected).abs() / tonks < 5e-5);
    }

    #[test]
    fn weak_coupling_expansion() {
        // e(γ) ≈ γ − 4γ^{3/2}/(3π) for small γ; 1% at γ = 0.01.
        let gamma = 0.01;
        let e = lieb_liniger(gamma).unwrap().e;
        let expansion = gamma - 4.0 * gamma.powf(1.5) / (3.0 * PI);
        assert!(
            (e - expansion).abs() / expansion < 1e-2,
            "e({gamma}) = {e}, weak expansion {expansion}"
        );
    }

    #[test]
    fn energy_monotone_on_reference_grid() {
        let es: Vec<f64> = [0.52, 1.5, 2.38, 3.0]
            .iter()
            .map(|&g| lieb_liniger(g).unwrap().e)
            .collect();
        for w in es.windows(2) {
            assert!(w[0] < w[1], "e(γ) must increase: {es:?}");
        }
    }

    #[test]
    fn quadrature_self_convergence() {
        for &gamma in &[0.01, 0.1, 1.0, 10.0, 100.0] {
            let coarse = energy_at_gamma(gamma, DEFAULT_NODES).unwrap();
            let fine = energy_at_gamma(gamma, 2 * DEFAULT_NODES).unwrap();
            let rel = (coarse - fine).abs() / fine;
            assert!(
                rel < 1e-8,
                "self-convergence at gamma={gamma}: rel change {rel:e}"
            );
        }
    }

    #[test]
    fn galilean_identity_and_k_bounds() {
        for &gamma in &[0.01, 0.1, 0.52, 1.5, 2.38, 3.0, 10.0, 100.0] {
            let p = lieb_liniger(gamma).unwrap();
            // v·K = 2πρ with ρ = 1 holds by construction; the check guards
            // the plumbing.
            assert_abs_diff_eq!(p.v * p.k_luttinger, 2.0 * PI, epsilon = 1e-6 * 2.0 * PI);
            assert!(p.k_luttinger >= 1.0, "K({gamma}) = {} < 1", p.k_luttinger);
            assert!(p.e > 0.0 && p.e < PI * PI / 3.0);
        }
        // K → 1 from above as γ → ∞.
        let k_tonks = lieb_liniger(1e4).unwrap().k_luttinger;
        assert!((k_tonks - 1.0).abs() < 5e-3, "K(1e4) = {k_tonks}");
    }

    #[test]
    fn tonks_velocity_approaches_fermi_velocity() {
        let p = lieb_liniger(1e4).unwrap();
        let vf = 2.0 * PI;
        assert!(
            (p.v - vf).abs() / vf < 5e-3,
            "v(1e4) = {}, Fermi velocity {vf}",
            p.v
        );
    }

    #[test]
    fn weak_coupling_velocity_and_k() {
        // v ≈ 2√γ·√(1 − √γ/2π) and K = 2π/v for small γ.
        let gamma = 0.01f64;
        let p = lieb_liniger(gamma).unwrap();
        let v_weak = 2.0 * gamma.sqrt() * (1.0 - gamma.sqrt() / (2.0 * PI)).sqrt();
        assert!(
            (p.v - v_weak).abs() / v_weak < 1e-3,
            "v({gamma}) = {}, weak form {v_weak}",
            p.v
        );
    }

    #[test]
    fn reference_energy_scaling_identity() {
        let base = reference_energy(1.5, 1.0).unwrap();
        let scaled = reference_energy(3.0, 2.0).unwrap();
        assert_abs_diff_eq!(scaled, 8.0 * base, epsilon = 1e-10 * scaled.abs());
    }

    #[test]
    fn reference_energy_tonks_at_half_density() {
        let rho: f64 = 0.5;
        let e0 = reference_energy(2e4, rho).unwrap();
        let tonks = PI * PI / 3.0 * rho.powi(3);
        assert!((e0 - tonks).abs() / tonks < 2e-3);
    }

    #[test]
    fn reference_energy_self_convergence() {
        let coarse = reference_energy_with_nodes(1.5, 1.0, DEFAULT_NODES).unwrap();
        let fine = reference_energy_with_nodes(1.5, 1.0, 2 * DEFAULT_NODES).unwrap();
        assert!((coarse - fine).abs() / fine.abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_gamma() {
        assert!(lieb_liniger(-1.0).is_err());
        assert!(lieb_liniger(0.0).is_err());
        assert!(lieb_liniger(f64::NAN).is_err());
    }

    #[test]
    fn gamma_table_has_expected_shape() {
        let csv = gamma_table_csv(&[0.52, 1.5], DEFAULT_NODES).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "gamma,e,e_prime,e_double_prime,v_over_rho,K"
        );
        assert_eq!(lines.count(), 2);
        // Round-trip: every numeric field parses back.
        for line in csv.lines().skip(1) {
            for field in line.split(',') {
                field.parse::<f64>().unwrap();
            }
        }
    }
}

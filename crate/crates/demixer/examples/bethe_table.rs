//! Bethe-ansatz oracle for the Lieb-Liniger gas: tabulate the dimensionless
//! ground-state energy e(γ) and its derivatives, and demonstrate the three
//! classic self-checks (Tonks-Girardeau limit, weak-coupling expansion, and
//! the Luttinger relation v·K = 2πρ).
//!
//! Run with: cargo run --release --example bethe_table

use demixer::bethe::{self, lieb_liniger};
use std::f64::consts::PI;

fn main() -> demixer::Result<()> {
    // The published table of e(γ): energy density is e0 = ρ³ e(γ), γ = c/ρ.
    let gammas = [0.1, 0.52, 1.0, 1.5, 2.38, 3.0, 10.0, 100.0];
    println!("{}", bethe::gamma_table_csv(&gammas, bethe::DEFAULT_NODES)?);

    // Tonks-Girardeau limit: e(γ) → π²/3 as γ → ∞ (free fermions).
    let tonks = lieb_liniger(1e4)?;
    println!(
        "Tonks limit    : e(1e4) = {:.6}  vs  π²/3 = {:.6}  (rel. dev {:.2e})",
        tonks.e,
        PI * PI / 3.0,
        (tonks.e - PI * PI / 3.0).abs() / (PI * PI / 3.0)
    );

    // Weak coupling: e(γ) ≈ γ − 4γ^{3/2}/(3π) for small γ.
    let gamma = 0.01;
    let weak = lieb_liniger(gamma)?;
    let expansion = gamma - 4.0 * gamma.powf(1.5) / (3.0 * PI);
    println!(
        "weak coupling  : e(0.01) = {:.8}  vs  γ − 4γ^1.5/3π = {:.8}  (rel. dev {:.2e})",
        weak.e,
        expansion,
        (weak.e - expansion).abs() / expansion
    );

    // Luttinger-liquid consistency: the sound velocity and the Luttinger
    // parameter must satisfy v·K = 2πρ at every coupling.
    let (c, rho) = (1.5, 0.5);
    let sol = lieb_liniger(c / rho)?;
    let v = bethe::sound_velocity(c, rho)?;
    println!(
        "Luttinger check: v·K = {:.10}  vs  2πρ = {:.10}  (rel. dev {:.2e})",
        v * sol.k_luttinger,
        2.0 * PI * rho,
        (v * sol.k_luttinger - 2.0 * PI * rho).abs() / (2.0 * PI * rho)
    );
    Ok(())
}

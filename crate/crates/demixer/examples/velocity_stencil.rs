//! Sound velocities of the two normal modes of the mixture from the
//! curvature of the constrained energy surface e0(ρ1, ρ2): the in-phase
//! mode v₊ (total density waves) and the out-of-phase mode v₋ (relative
//! density waves), compared with the weak-coupling Luttinger estimate
//! v₋²/v² = 1 − K·g/(π·v).
//!
//! Run with: cargo run --release --example velocity_stencil

use demixer::bethe;
use demixer::cmps::StateShape;
use demixer::luttinger::{velocities, weak_coupling_estimate, VelocityConfig};
use demixer::observables::FieldParams;
use demixer::optimize::OptimizerConfig;

fn main() -> demixer::Result<()> {
    let (c, rho) = (1.5, 0.5);
    let g_over_c = 1.0;
    let p = FieldParams::symmetric_pair(c, g_over_c * c, rho);
    let shape = StateShape::Pair { d: 4, p: 1 };
    let cfg = VelocityConfig::for_density(
        rho,
        OptimizerConfig {
            seed: 7,
            max_iters: 6000,
            ..OptimizerConfig::default()
        },
    );

    println!("mixture at c = {c}, g/c = {g_over_c}, ρ_α = {rho}, D = 4");
    println!("solving the 3×3 density stencil (9 constrained ground states + halved step)...\n");
    let ext = velocities(shape, &p, &cfg, None)?;
    for (h, vp, vm) in ext.raw_velocities() {
        println!("  step h = {h:<7.4}  v₊² = {vp:.6}   v₋² = {vm:.6}");
    }
    println!("  extrapolated    v₊² = {:.6}   v₋² = {:.6}", ext.point.v_plus_sq, ext.point.v_minus_sq);

    let v = bethe::sound_velocity(c, rho)?;
    let weak = weak_coupling_estimate(c, rho, g_over_c * c)?;
    println!("\nsingle-species sound velocity v = {v:.6} (v² = {:.6})", v * v);
    println!(
        "weak-coupling estimate: v₋²/v² = {:.6}  →  v₋² ≈ {:.6}",
        weak.v_minus_sq_over_v_sq,
        weak.v_minus_sq_over_v_sq * v * v
    );
    println!(
        "linear extrapolation of that estimate hits zero at g*/c = {:.4} (demixing instability)",
        weak.g_star / c
    );
    Ok(())
}

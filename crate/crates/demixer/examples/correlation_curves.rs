//! Distance-resolved density-density correlations C_αβ(x) on both sides of
//! the demixing transition: in the miscible phase the interspecies curve
//! saturates at ρ², while in the demixed phase it collapses and the
//! same-species curves develop a plateau near 2ρ² (each species occupies
//! half the system at twice the density).
//!
//! Run with: cargo run --release --example correlation_curves

use demixer::cmps::StateShape;
use demixer::observables::{correlation_curve, FieldParams};
use demixer::optimize::{minimize, OptimizerConfig};

fn main() -> demixer::Result<()> {
    let (c, rho) = (1.5, 0.5);
    let shape = StateShape::Pair { d: 4, p: 1 };
    let cfg = OptimizerConfig {
        seed: 7,
        max_iters: 6000,
        ..OptimizerConfig::default()
    };
    let xs: Vec<f64> = vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 100.0];

    for (label, g_over_c) in [("miscible  (g/c = 0.52)", 0.52), ("demixed   (g/c = 2.50)", 2.50)] {
        let p = FieldParams::symmetric_pair(c, g_over_c * c, rho);
        let res = minimize(shape, &p, &cfg)?;
        let curve = correlation_curve(&res.state, &xs)?;
        println!("{label}   e0 = {:.8}  converged = {}", res.observables.e0, res.converged);
        println!("{:>8}  {:>12}  {:>12}  {:>12}", "x", "C11(x)/ρ²", "C22(x)/ρ²", "C12(x)/ρ²");
        for (k, x) in xs.iter().enumerate() {
            let m = &curve.values[k];
            println!(
                "{:>8.1}  {:>12.6}  {:>12.6}  {:>12.6}",
                x,
                m[(0, 0)] / (rho * rho),
                m[(1, 1)] / (rho * rho),
                m[(0, 1)] / (rho * rho)
            );
        }
        println!();
    }
    println!("miscible: C12 → ρ² (species interpenetrate); demixed: C12 ≈ 0 and");
    println!("C11 ≈ C22 ≈ 2ρ² over a finite window (each species bunched at density 2ρ).");
    Ok(())
}

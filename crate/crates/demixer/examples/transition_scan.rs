//! Locate the mixing/demixing transition: scan the interspecies coupling,
//! extract v₋²(g) and the interspecies fluctuation C12(0), and let the two
//! independent detectors (velocity zero crossing, fluctuation collapse)
//! bracket the critical coupling — expected near g ≈ 2c for a symmetric
//! mixture.
//!
//! A compact demonstration at D = 3 (a production scan would use D ≥ 5 and
//! a denser grid; see configs/fig1.cfg for the CLI equivalent).
//!
//! Run with: cargo run --release --example transition_scan

use demixer::cmps::StateShape;
use demixer::luttinger::{transition_scan, TransitionScanConfig, VelocityConfig};
use demixer::optimize::OptimizerConfig;

fn main() -> demixer::Result<()> {
    let (c, rho) = (1.5, 0.5);
    let cfg = TransitionScanConfig {
        shape: StateShape::Pair { d: 3, p: 1 },
        c,
        rho,
        g_over_c_grid: vec![1.7, 1.9, 2.1, 2.3],
        velocity: VelocityConfig {
            richardson: false,
            ..VelocityConfig::for_density(
                rho,
                OptimizerConfig {
                    seed: 7,
                    max_iters: 6000,
                    ..OptimizerConfig::default()
                },
            )
        },
    };

    println!("transition scan at c = {c}, ρ_α = {rho}, D = 3 (9 solves per grid point)\n");
    let scan = transition_scan(&cfg)?;
    println!(
        "{:>6}  {:>10}  {:>10}  {:>12}  {:>10}",
        "g/c", "v₊²", "v₋²", "v₋² (weak)", "C12(0)/ρ²"
    );
    for row in &scan.rows {
        println!(
            "{:>6.2}  {:>10.4}  {:>10.4}  {:>12.4}  {:>10.4}",
            row.g_over_c,
            row.vplus_sq,
            row.vminus_sq,
            row.vminus_sq_weak,
            row.c12_0 / (rho * rho)
        );
    }
    let r = &scan.report;
    println!(
        "\ntransition estimate: g*/c = {:.3} (bracket [{:.2}, {:.2}], method {:?})",
        r.g_star_over_c, r.bracket.0, r.bracket.1, r.method
    );
    if let Some(onset) = r.fluctuation_onset_over_c {
        println!("fluctuation-collapse detector agrees: onset at g/c = {onset:.3}");
    }
    Ok(())
}

use demixer::bethe;
use demixer::cmps::StateShape;
use demixer::observables::FieldParams;
use demixer::optimize::{minimize, OptimizerConfig};
use std::time::Instant;

fn main() -> demixer::Result<()> {
    let c = 1.5;
    let rho = 0.5;
    let p = FieldParams::symmetric_pair(c, 2.5 * c, rho);
    let cfg = OptimizerConfig {
        seed: 7,
        restarts: 1,
        max_iters: 6_000,
        ..OptimizerConfig::default()
    };
    let t0 = Instant::now();
    let res = minimize(StateShape::Pair { d: 5, p: 1 }, &p, &cfg)?;
    let reference = bethe::reference_energy(c, 2.0 * rho)?;
    println!(
        "demixed D=5 g/c=2.5: e0={:.8} ref={:.8} excess={:.3e} rho=({:.6},{:.6}) conv={} iters={} t={:.1}s",
        res.observables.e0,
        reference,
        (res.observables.e0 - reference) / reference,
        res.observables.rho[0],
        res.observables.rho[1],
        res.converged,
        res.iterations,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

//! `demixer` — command-line front end for the cMPS two-species Bose-gas
//! simulator.  All physics lives in the library; this binary only parses
//! arguments, reads the run configuration, and maps errors to exit codes:
//! 0 = success, 1 = runtime failure or unconverged points, 2 = bad
//! configuration (nothing written).

use clap::Parser;
use demixer::error::Error;
use demixer::sweep::{run_cli, RunOutcome};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "demixer",
    version,
    about = "Ground states, correlations, and sound velocities of a two-species 1D Bose gas \
             (translation-invariant cMPS), plus a Bethe-ansatz oracle",
    after_help = "MODES:\n  single        one single-species ground state, checked against the \
                  Bethe-ansatz oracle\n  pair          one two-species ground state at fixed \
                  g/c\n  sweep         ground states along a g/c grid (energies, densities, \
                  local fluctuations)\n  correlations  one ground state plus distance-resolved \
                  density correlations\n  velocities    sound velocities along a g/c grid and \
                  the demixing-transition estimate\n  bethe         Bethe-ansatz oracle table \
                  over a list of couplings gamma\n\nConfig files are flat `key = value` lines \
                  (# comments). See README.md for the key reference."
)]
struct Cli {
    /// Run mode: single | pair | sweep | correlations | velocities | bethe
    mode: String,

    /// Run configuration file (flat key = value lines)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Override one config key (repeatable), e.g. --set d=6
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (overrides the `out` config key)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for unchained sweeps (overrides `workers`)
    #[arg(long, value_name = "N")]
    workers: Option<usize>,

    /// Reuse completed per-point results and checkpoints from a previous run
    #[arg(long)]
    resume: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_cli(
        &cli.mode,
        &cli.config,
        &cli.set,
        cli.out.as_deref(),
        cli.workers,
        cli.resume,
    ) {
        Ok(RunOutcome::Success) => ExitCode::from(0),
        Ok(RunOutcome::Partial) => {
            eprintln!("warning: some points did not converge (see summary.json)");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

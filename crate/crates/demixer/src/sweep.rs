//! Experiment orchestration behind the `demixer` command line: flat
//! key-value run configuration with line-numbered diagnostics, six run
//! modes (`single`, `pair`, `sweep`, `correlations`, `velocities`,
//! `bethe`), deterministic result files, and crash-safe per-point
//! checkpoints with resume.
//!
//! Determinism contract: result files contain no timestamps or host
//! information, floats print in shortest round-trip form, and record order
//! is fixed by the grid (not by execution order), so identical
//! configurations produce byte-identical outputs.

use crate::bethe;
use crate::cmps::{load_checkpoint, save_checkpoint, CmpsParams, StateShape};
use crate::error::{Error, Result};
use crate::luttinger::{
    self, locate_transition, velocity_csv, TransitionReport, VelocityConfig, VelocityPoint,
    VelocityRow,
};
use crate::observables::{correlation_curve, FieldParams};
use crate::optimize::{minimize, minimize_from, GroundStateResult, OptimizerConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Version stamped into every JSON artifact this module writes.
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Run modes
// ---------------------------------------------------------------------------

/// What a run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One single-species ground state, validated against the Bethe oracle.
    Single,
    /// One two-species ground state at a fixed interspecies coupling.
    Pair,
    /// Two-species ground states along a g/c grid (energy/fluctuation
    /// curves; optionally velocities per point).
    Sweep,
    /// One two-species ground state plus distance-resolved correlations.
    Correlations,
    /// Velocity extraction along a g/c grid plus transition location.
    Velocities,
    /// Bethe-ansatz oracle table over a γ list (no variational solve).
    Bethe,
}

impl Mode {
    fn parse(s: &str) -> Option<Mode> {
        Some(match s {
            "single" => Mode::Single,
            "pair" => Mode::Pair,
            "sweep" => Mode::Sweep,
            "correlations" => Mode::Correlations,
            "velocities" => Mode::Velocities,
            "bethe" => Mode::Bethe,
            _ => return None,
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Pair => "pair",
            Mode::Sweep => "sweep",
            Mode::Correlations => "correlations",
            Mode::Velocities => "velocities",
            Mode::Bethe => "bethe",
        }
    }
}

// ---------------------------------------------------------------------------
// Raw key-value configuration
// ---------------------------------------------------------------------------

/// Every key the configuration format accepts.
const KNOWN_KEYS: &[&str] = &[
    "mode",
    "c",
    "rho",
    "d",
    "p",
    "g_over_c",
    "g_min",
    "g_max",
    "g_step",
    "g_list",
    "gamma_list",
    "oracle_nodes",
    "grad_tol",
    "max_iters",
    "restarts",
    "seed",
    "init_scale",
    "mu_tol",
    "fd_step",
    "h",
    "richardson",
    "velocities",
    "continuation",
    "x_min",
    "x_max",
    "x_points",
    "x_log",
    "out",
    "workers",
];

/// Parsed-but-untyped configuration: key → (source line, value).  The line
/// is 1-based for file entries and absent for command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (Option<usize>, String)>,
}

fn config_err(line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

impl RawConfig {
    /// Parse the flat `key = value` format: one assignment per line, `#`
    /// starts a comment, blank lines are ignored.  Unknown and duplicate
    /// keys are rejected with their line number.
    pub fn from_text(text: &str) -> Result<RawConfig> {
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(
                    Some(line_no),
                    format!("expected `key = value`, got '{line}'"),
                ));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(config_err(Some(line_no), format!("unknown key '{key}'")));
            }
            if entries.insert(key.clone(), (Some(line_no), value)).is_some() {
                return Err(config_err(
                    Some(line_no),
                    format!("duplicate key '{key}'"),
                ));
            }
        }
        Ok(RawConfig { entries })
    }

    /// Apply one `key=value` command-line override (replaces any file
    /// value; unknown keys are rejected).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(config_err(
                None,
                format!("--set expects key=value, got '{assignment}'"),
            ));
        };
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(config_err(None, format!("unknown key '{key}' in --set")));
        }
        self.entries
            .insert(key.to_string(), (None, value.trim().to_string()));
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&(Option<usize>, String)> {
        self.entries.get(key)
    }

    fn parse_with<T>(&self, key: &str, default: T, what: &str) -> Result<T>
    where
        T: std::str::FromStr,
    {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => v.parse::<T>().map_err(|_| {
                config_err(*line, format!("key '{key}': expected {what}, got '{v}'"))
            }),
        }
    }

    fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        self.parse_with(key, default, "a number")
    }

    fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        self.parse_with(key, default, "a non-negative integer")
    }

    fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        self.parse_with(key, default, "a non-negative integer")
    }

    fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        self.parse_with(key, default, "true or false")
    }

    fn get_f64_list(&self, key: &str) -> Result<Option<(Option<usize>, Vec<f64>)>> {
        let Some((line, v)) = self.raw(key) else {
            return Ok(None);
        };
        let mut out = Vec::new();
        for item in v.split(',') {
            let item = item.trim();
            out.push(item.parse::<f64>().map_err(|_| {
                config_err(
                    *line,
                    format!("key '{key}': expected comma-separated numbers, got '{item}'"),
                )
            })?);
        }
        Ok(Some((*line, out)))
    }
}

// ---------------------------------------------------------------------------
// Typed run configuration
// ---------------------------------------------------------------------------

/// A fully validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    /// Intraspecies coupling.
    pub c: f64,
    /// Per-species target density.
    pub rho: f64,
    /// Bond dimension of the per-species matrices.
    pub d: usize,
    /// Interspecies coupling channels.
    pub p: usize,
    /// Coupling for the single-point pair modes, in units of c.
    pub g_over_c: f64,
    /// Coupling grid for `sweep`/`velocities`, in units of c (increasing).
    pub grid: Vec<f64>,
    /// γ values for `bethe`.
    pub gammas: Vec<f64>,
    /// Node budget of the oracle's integral-equation solver.
    pub oracle_nodes: usize,
    pub optimizer: OptimizerConfig,
    /// Stencil step for velocity extraction.
    pub h: f64,
    /// Halve the stencil step once and Richardson-extrapolate.
    pub richardson: bool,
    /// Extract velocities at every sweep point (costs one stencil per
    /// point; the dedicated `velocities` mode always does).
    pub sweep_velocities: bool,
    /// Warm-start each grid point from the previous one (ascending g).
    /// Chained runs are inherently sequential; `workers` only parallelizes
    /// unchained (`continuation = false`) sweeps.
    pub continuation: bool,
    /// Correlation distance grid controls.
    pub x_min: f64,
    pub x_max: f64,
    pub x_points: usize,
    pub x_log: bool,
    /// Output directory for all result files.
    pub out_dir: PathBuf,
    /// Worker threads for unchained sweeps.
    pub workers: usize,
    /// Reuse completed per-point results and checkpoints.
    pub resume: bool,
}

impl RunConfig {
    /// Build and validate a run description from file text, `--set`
    /// overrides, and command-line flags.  The command-line mode is
    /// authoritative; a `mode` key in the file must agree with it.
    pub fn build(
        cli_mode: &str,
        file_text: &str,
        overrides: &[String],
        out_flag: Option<&Path>,
        workers_flag: Option<usize>,
        resume: bool,
    ) -> Result<RunConfig> {
        let mut raw = RawConfig::from_text(file_text)?;
        for assignment in overrides {
            raw.apply_override(assignment)?;
        }

        let Some(mode) = Mode::parse(cli_mode) else {
            return Err(config_err(
                None,
                format!(
                    "unknown mode '{cli_mode}' (expected single, pair, sweep, correlations, \
                     velocities, or bethe)"
                ),
            ));
        };
        if let Some((line, file_mode)) = raw.raw("mode") {
            if Mode::parse(file_mode) != Some(mode) {
                return Err(config_err(
                    *line,
                    format!(
                        "config file sets mode '{file_mode}' but the command line asked for \
                         '{}'",
                        mode.name()
                    ),
                ));
            }
        }

        let c = raw.get_f64("c", 1.5)?;
        let rho = raw.get_f64("rho", 0.5)?;
        let d = raw.get_usize("d", 5)?;
        let p = raw.get_usize("p", 1)?;
        let g_over_c = raw.get_f64("g_over_c", 0.52)?;
        let oracle_nodes = raw.get_usize("oracle_nodes", bethe::DEFAULT_NODES)?;

        let defaults = OptimizerConfig::default();
        let optimizer = OptimizerConfig {
            grad_tol: raw.get_f64("grad_tol", defaults.grad_tol)?,
            max_iters: raw.get_usize("max_iters", 6000)?,
            restarts: raw.get_usize("restarts", defaults.restarts)?,
            seed: raw.get_u64("seed", defaults.seed)?,
            init_scale: raw.get_f64("init_scale", defaults.init_scale)?,
            mu_tol: raw.get_f64("mu_tol", defaults.mu_tol)?,
            fd_step: raw.get_f64("fd_step", defaults.fd_step)?,
        };

        let grid = Self::build_grid(&raw, mode)?;
        let gammas = match raw.get_f64_list("gamma_list")? {
            Some((line, gs)) => {
                if gs.is_empty() || gs.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                    return Err(config_err(line, "gamma_list needs positive finite values"));
                }
                gs
            }
            None => vec![0.52, 1.5, 2.38, 3.0],
        };

        let h = raw.get_f64("h", luttinger::DEFAULT_STEP_FRACTION * rho)?;
        let richardson = raw.get_bool("richardson", true)?;
        let sweep_velocities = raw.get_bool("velocities", false)?;
        let continuation = raw.get_bool("continuation", true)?;

        let x_log = raw.get_bool("x_log", true)?;
        let x_min = raw.get_f64("x_min", 0.1)?;
        let x_max = raw.get_f64("x_max", 1000.0)?;
        let x_points = raw.get_usize("x_points", 61)?;

        let out_dir = match out_flag {
            Some(p) => p.to_path_buf(),
            None => match raw.raw("out") {
                Some((_, v)) => PathBuf::from(v),
                None => PathBuf::from("runs/out"),
            },
        };
        let workers = match workers_flag {
            Some(w) => w,
            None => raw.get_usize("workers", 1)?,
        };

        let cfg = RunConfig {
            mode,
            c,
            rho,
            d,
            p,
            g_over_c,
            grid,
            gammas,
            oracle_nodes,
            optimizer,
            h,
            richardson,
            sweep_velocities,
            continuation,
            x_min,
            x_max,
            x_points,
            x_log,
            out_dir,
            workers,
            resume,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn build_grid(raw: &RawConfig, mode: Mode) -> Result<Vec<f64>> {
        let listed = raw.get_f64_list("g_list")?;
        let has_bounds =
            raw.raw("g_min").is_some() || raw.raw("g_max").is_some() || raw.raw("g_step").is_some();
        if listed.is_some() && has_bounds {
            let line = raw.raw("g_list").and_then(|(l, _)| *l);
            return Err(config_err(
                line,
                "give either g_list or g_min/g_max/g_step, not both",
            ));
        }
        if let Some((line, gs)) = listed {
            if gs.is_empty() {
                return Err(config_err(line, "g_list is empty"));
            }
            if gs.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(config_err(line, "g_list must be strictly increasing"));
            }
            return Ok(gs);
        }
        if has_bounds {
            let line = raw.raw("g_min").and_then(|(l, _)| *l);
            let g_min = raw.get_f64("g_min", f64::NAN)?;
            let g_max = raw.get_f64("g_max", f64::NAN)?;
            let g_step = raw.get_f64("g_step", f64::NAN)?;
            if !(g_min.is_finite() && g_max.is_finite() && g_step.is_finite()) {
                return Err(config_err(
                    line,
                    "grid bounds need all of g_min, g_max, g_step",
                ));
            }
            if !(g_step > 0.0) {
                return Err(config_err(line, "g_step must be positive"));
            }
            if g_max < g_min {
                return Err(config_err(line, "empty grid: g_max < g_min"));
            }
            let n = ((g_max - g_min) / g_step + 1e-9).floor() as usize + 1;
            return Ok((0..n).map(|k| g_min + g_step * k as f64).collect());
        }
        // Grids are only consumed by the grid modes; leave empty otherwise
        // and let validate() demand one where required.
        if mode == Mode::Velocities {
            return Ok(luttinger::default_transition_grid());
        }
        Ok(Vec::new())
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(config_err(None, msg));
        if !(self.c > 0.0 && self.c.is_finite()) && self.mode != Mode::Bethe {
            return fail(format!("c must be positive and finite, got {}", self.c));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return fail(format!("rho must be positive and finite, got {}", self.rho));
        }
        if self.d < 1 {
            return fail("d must be at least 1".into());
        }
        if self.p < 1 {
            return fail("p must be at least 1".into());
        }
        if self.workers < 1 {
            return fail("workers must be at least 1".into());
        }
        if matches!(self.mode, Mode::Sweep) && self.grid.is_empty() {
            return fail("sweep mode needs a coupling grid (g_min/g_max/g_step or g_list)".into());
        }
        if matches!(self.mode, Mode::Sweep | Mode::Velocities) {
            if self.grid.is_empty() {
                return fail("empty coupling grid".into());
            }
            if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
                return fail("coupling grid must be strictly increasing".into());
            }
        }
        if matches!(self.mode, Mode::Correlations) {
            if self.x_points < 2 {
                return fail("x_points must be at least 2".into());
            }
            if self.x_log && !(self.x_min > 0.0) {
                return fail("x_min must be positive for a logarithmic grid".into());
            }
            if !(self.x_max > self.x_min) {
                return fail("x_max must exceed x_min".into());
            }
        }
        if !(self.h > 0.0 && self.h < self.rho) {
            return fail(format!(
                "stencil step h must satisfy 0 < h < rho, got {}",
                self.h
            ));
        }
        self.optimizer
            .validate()
            .map_err(|e| config_err(None, e.to_string()))
    }

    fn pair_shape(&self) -> StateShape {
        StateShape::Pair {
            d: self.d,
            p: self.p,
        }
    }

    /// Distance grid for correlation runs: `x = 0` plus either a
    /// logarithmic or a linear ladder up to `x_max`.
    pub fn x_grid(&self) -> Vec<f64> {
        let mut xs = vec![0.0];
        if self.x_log {
            let ratio = (self.x_max / self.x_min).ln();
            xs.extend(
                (0..self.x_points)
                    .map(|k| self.x_min * (ratio * k as f64 / (self.x_points - 1) as f64).exp()),
            );
        } else {
            xs.extend(
                (1..=self.x_points).map(|k| self.x_max * k as f64 / self.x_points as f64),
            );
        }
        xs
    }
}

// ---------------------------------------------------------------------------
// Result records
// ---------------------------------------------------------------------------

/// Per-grid-point record of a sweep (one row of `sweep.csv`), also stored
/// as the point's JSON checkpoint companion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointRecord {
    pub schema_version: u32,
    pub g_over_c: f64,
    pub e0: f64,
    pub rho: Vec<f64>,
    pub c11_0: f64,
    pub c22_0: f64,
    pub c12_0: f64,
    /// Present when the run extracted velocities at this point.
    pub vplus_sq: Option<f64>,
    pub vminus_sq: Option<f64>,
    pub mu: Vec<f64>,
    pub grad_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub seed_used: u64,
    /// File name of the state checkpoint next to this record.
    pub checkpoint: String,
}

impl PointRecord {
    fn from_result(
        g_over_c: f64,
        res: &GroundStateResult,
        velocities: Option<(f64, f64)>,
        checkpoint: String,
    ) -> PointRecord {
        let fluct = &res.observables.fluct;
        PointRecord {
            schema_version: SUMMARY_SCHEMA_VERSION,
            g_over_c,
            e0: res.observables.e0,
            rho: res.observables.rho.clone(),
            c11_0: fluct[(0, 0)],
            c22_0: fluct[(1, 1)],
            c12_0: fluct[(0, 1)],
            vplus_sq: velocities.map(|v| v.0),
            vminus_sq: velocities.map(|v| v.1),
            mu: res.mu.clone(),
            grad_norm: res.grad_norm,
            converged: res.converged,
            iterations: res.iterations,
            seed_used: res.seed_used,
            checkpoint,
        }
    }
}

/// Render sweep records as CSV (schema: `g_over_c,e0,rho1,rho2,C11_0,`
/// `C22_0,C12_0,vplus_sq,vminus_sq,grad_norm,converged,iterations,`
/// `seed_used`), ordered by `g_over_c`.  Velocity columns print `NaN` when
/// the sweep did not extract them.
pub fn sweep_csv(rows: &[PointRecord]) -> String {
    let mut sorted: Vec<&PointRecord> = rows.iter().collect();
    sorted.sort_by(|a, b| a.g_over_c.total_cmp(&b.g_over_c));
    let mut out = String::from(
        "g_over_c,e0,rho1,rho2,C11_0,C22_0,C12_0,vplus_sq,vminus_sq,grad_norm,converged,iterations,seed_used\n",
    );
    for r in sorted {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.g_over_c,
            r.e0,
            r.rho[0],
            r.rho.get(1).copied().unwrap_or(f64::NAN),
            r.c11_0,
            r.c22_0,
            r.c12_0,
            r.vplus_sq.unwrap_or(f64::NAN),
            r.vminus_sq.unwrap_or(f64::NAN),
            r.grad_norm,
            r.converged,
            r.iterations,
            r.seed_used
        )
        .expect("write to string cannot fail");
    }
    out
}

/// Did every solve converge?
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// All points converged; exit status 0.
    Success,
    /// At least one point is reported with `converged = false`; exit
    /// status 1.
    Partial,
}

// ---------------------------------------------------------------------------
// File plumbing
// ---------------------------------------------------------------------------

/// Write a file atomically (temp file + rename), so interrupted runs never
/// leave half-written artifacts.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, &text)
}

fn point_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("point_{index:03}.json"))
}

fn state_file_name(index: usize) -> String {
    format!("state_{index:03}.json")
}

/// Load a completed point when resuming: the record must parse, be
/// converged, and its checkpoint must load.
fn load_completed_point(dir: &Path, index: usize) -> Option<(PointRecord, CmpsParams)> {
    let record: PointRecord =
        serde_json::from_str(&std::fs::read_to_string(point_file(dir, index)).ok()?).ok()?;
    if !record.converged {
        return None;
    }
    let params = load_checkpoint(&dir.join(&record.checkpoint)).ok()?;
    Some((record, params))
}

// ---------------------------------------------------------------------------
// Mode drivers
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct BetheSummary<'a> {
    schema_version: u32,
    mode: &'static str,
    gammas: &'a [f64],
    oracle_nodes: usize,
    files: Vec<String>,
}

fn run_bethe(cfg: &RunConfig) -> Result<RunOutcome> {
    let csv = bethe::gamma_table_csv(&cfg.gammas, cfg.oracle_nodes)?;
    write_atomic(&cfg.out_dir.join("bethe.csv"), &csv)?;
    write_json(
        &cfg.out_dir.join("summary.json"),
        &BetheSummary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            mode: "bethe",
            gammas: &cfg.gammas,
            oracle_nodes: cfg.oracle_nodes,
            files: vec!["bethe.csv".into()],
        },
    )?;
    Ok(RunOutcome::Success)
}

#[derive(Serialize)]
struct SinglePointSummary {
    schema_version: u32,
    mode: &'static str,
    c: f64,
    g: f64,
    target_rho: Vec<f64>,
    d: usize,
    p: Option<usize>,
    e0: f64,
    rho: Vec<f64>,
    mu: Vec<f64>,
    fluct: Vec<Vec<f64>>,
    grad_norm: f64,
    converged: bool,
    iterations: usize,
    seed_used: u64,
    oracle_e0: Option<f64>,
    oracle_rel_error: Option<f64>,
    files: Vec<String>,
}

/// Solve one point (single or pair), honoring `--resume` via the state
/// checkpoint.
fn solve_point(
    cfg: &RunConfig,
    shape: StateShape,
    p: &FieldParams,
    warm: Option<&CmpsParams>,
) -> Result<GroundStateResult> {
    match warm {
        Some(w) => minimize_from(w, p, &cfg.optimizer),
        None => minimize(shape, p, &cfg.optimizer),
    }
}

fn run_single_or_pair(cfg: &RunConfig) -> Result<RunOutcome> {
    let is_single = cfg.mode == Mode::Single;
    let (shape, params) = if is_single {
        (
            StateShape::Single { d: cfg.d },
            FieldParams::single(cfg.c, cfg.rho),
        )
    } else {
        (
            cfg.pair_shape(),
            FieldParams::symmetric_pair(cfg.c, cfg.g_over_c * cfg.c, cfg.rho),
        )
    };
    let state_path = cfg.out_dir.join("state.json");
    let warm = if cfg.resume {
        load_checkpoint(&state_path).ok()
    } else {
        None
    };
    let res = solve_point(cfg, shape, &params, warm.as_ref())?;
    save_checkpoint(&state_path, res.state.source())?;

    let (oracle_e0, oracle_rel_error) = if is_single {
        let reference = bethe::reference_energy(cfg.c, cfg.rho)?;
        (
            Some(reference),
            Some((res.observables.e0 - reference) / reference),
        )
    } else {
        (None, None)
    };
    let fluct = &res.observables.fluct;
    let s = fluct.nrows();
    write_json(
        &cfg.out_dir.join("summary.json"),
        &SinglePointSummary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            mode: cfg.mode.name(),
            c: cfg.c,
            g: if is_single { 0.0 } else { cfg.g_over_c * cfg.c },
            target_rho: params.target_rho.clone(),
            d: cfg.d,
            p: (!is_single).then_some(cfg.p),
            e0: res.observables.e0,
            rho: res.observables.rho.clone(),
            mu: res.mu.clone(),
            fluct: (0..s)
                .map(|i| (0..s).map(|j| fluct[(i, j)]).collect())
                .collect(),
            grad_norm: res.grad_norm,
            converged: res.converged,
            iterations: res.iterations,
            seed_used: res.seed_used,
            oracle_e0,
            oracle_rel_error,
            files: vec!["state.json".into()],
        },
    )?;
    Ok(if res.converged {
        RunOutcome::Success
    } else {
        RunOutcome::Partial
    })
}

#[derive(Serialize)]
struct CorrelationsSummary {
    schema_version: u32,
    mode: &'static str,
    c: f64,
    g: f64,
    target_rho: Vec<f64>,
    d: usize,
    p: usize,
    e0: f64,
    rho: Vec<f64>,
    converged: bool,
    iterations: usize,
    seed_used: u64,
    correlation_length: f64,
    files: Vec<String>,
}

fn run_correlations(cfg: &RunConfig) -> Result<RunOutcome> {
    let params = FieldParams::symmetric_pair(cfg.c, cfg.g_over_c * cfg.c, cfg.rho);
    let state_path = cfg.out_dir.join("state.json");
    let warm = if cfg.resume {
        load_checkpoint(&state_path).ok()
    } else {
        None
    };
    let res = solve_point(cfg, cfg.pair_shape(), &params, warm.as_ref())?;
    save_checkpoint(&state_path, res.state.source())?;

    let xs = cfg.x_grid();
    let curve = correlation_curve(&res.state, &xs)?;
    write_atomic(&cfg.out_dir.join("correlations.csv"), &curve.to_csv())?;

    let data = crate::observables::stationary_data(&res.state)?;
    write_json(
        &cfg.out_dir.join("summary.json"),
        &CorrelationsSummary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            mode: "correlations",
            c: cfg.c,
            g: cfg.g_over_c * cfg.c,
            target_rho: params.target_rho.clone(),
            d: cfg.d,
            p: cfg.p,
            e0: res.observables.e0,
            rho: res.observables.rho.clone(),
            converged: res.converged,
            iterations: res.iterations,
            seed_used: res.seed_used,
            correlation_length: data.correlation_length(),
            files: vec!["state.json".into(), "correlations.csv".into()],
        },
    )?;
    Ok(if res.converged {
        RunOutcome::Success
    } else {
        RunOutcome::Partial
    })
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    schema_version: u32,
    mode: &'static str,
    c: f64,
    rho: f64,
    d: usize,
    p: usize,
    grid: &'a [f64],
    continuation: bool,
    velocities: bool,
    converged_points: usize,
    total_points: usize,
    files: Vec<String>,
}

/// Solve one sweep point, including the optional velocity stencil.
fn solve_sweep_point(
    cfg: &RunConfig,
    g_over_c: f64,
    warm: Option<&CmpsParams>,
    with_velocities: bool,
) -> Result<(PointRecord, CmpsParams, usize)> {
    let p = FieldParams::symmetric_pair(cfg.c, g_over_c * cfg.c, cfg.rho);
    let (res, velocities) = if with_velocities {
        let vcfg = VelocityConfig {
            h: cfg.h,
            richardson: cfg.richardson,
            optimizer: cfg.optimizer.clone(),
        };
        let extraction = luttinger::velocities(cfg.pair_shape(), &p, &vcfg, warm)?;
        let v = (extraction.point.v_plus_sq, extraction.point.v_minus_sq);
        (extraction.center_result().clone(), Some(v))
    } else {
        (solve_point(cfg, cfg.pair_shape(), &p, warm)?, None)
    };
    let params = res.state.source().clone();
    let record = PointRecord::from_result(g_over_c, &res, velocities, String::new());
    Ok((record, params, res.iterations))
}

/// Shared sweep skeleton for `sweep` and `velocities` modes: walks the
/// grid (chained or parallel), checkpoints each point, and returns the
/// records in grid order.
fn run_grid(cfg: &RunConfig, with_velocities: bool) -> Result<Vec<PointRecord>> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let n = cfg.grid.len();
    let mut records: Vec<Option<PointRecord>> = vec![None; n];
    let mut states: Vec<Option<CmpsParams>> = vec![None; n];

    if cfg.resume {
        for i in 0..n {
            if let Some((rec, params)) = load_completed_point(&cfg.out_dir, i) {
                if rec.g_over_c == cfg.grid[i]
                    && rec.vplus_sq.is_some() == with_velocities
                {
                    records[i] = Some(rec);
                    states[i] = Some(params);
                }
            }
        }
    }

    let solve_and_store = |i: usize, warm: Option<&CmpsParams>| -> Result<(PointRecord, CmpsParams)> {
        let (mut record, params, _) = solve_sweep_point(cfg, cfg.grid[i], warm, with_velocities)?;
        record.checkpoint = state_file_name(i);
        save_checkpoint(&cfg.out_dir.join(&record.checkpoint), &params)?;
        write_json(&point_file(&cfg.out_dir, i), &record)?;
        Ok((record, params))
    };

    if cfg.continuation || cfg.workers == 1 {
        // Chained walk in ascending g; resume reuses stored points and
        // keeps the chain identical by warm-starting from the stored state.
        let mut warm: Option<CmpsParams> = None;
        for i in 0..n {
            if let Some(params) = &states[i] {
                warm = Some(params.clone());
                continue;
            }
            let warm_ref = if cfg.continuation { warm.as_ref() } else { None };
            let (record, params) = solve_and_store(i, warm_ref)?;
            warm = Some(params);
            records[i] = Some(record);
        }
    } else {
        // Unchained, order-independent points: a shared queue feeds the
        // workers, and records land in grid order regardless of timing.
        let queue = Mutex::new((0..n).filter(|i| records[*i].is_none()).collect::<Vec<_>>());
        let slots: Vec<Mutex<Option<Result<PointRecord>>>> =
            (0..n).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..cfg.workers.min(n) {
                scope.spawn(|| loop {
                    let next = queue.lock().expect("queue poisoned").pop();
                    let Some(i) = next else { break };
                    let outcome = solve_and_store(i, None).map(|(record, _)| record);
                    *slots[i].lock().expect("slot poisoned") = Some(outcome);
                });
            }
        });
        for (i, slot) in slots.into_iter().enumerate() {
            if let Some(outcome) = slot.into_inner().expect("slot poisoned") {
                records[i] = Some(outcome?);
            }
        }
    }

    Ok(records
        .into_iter()
        .map(|r| r.expect("every grid point solved or restored"))
        .collect())
}

fn run_sweep(cfg: &RunConfig) -> Result<RunOutcome> {
    let records = run_grid(cfg, cfg.sweep_velocities)?;
    write_atomic(&cfg.out_dir.join("sweep.csv"), &sweep_csv(&records))?;
    let converged_points = records.iter().filter(|r| r.converged).count();
    write_json(
        &cfg.out_dir.join("summary.json"),
        &SweepSummary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            mode: "sweep",
            c: cfg.c,
            rho: cfg.rho,
            d: cfg.d,
            p: cfg.p,
            grid: &cfg.grid,
            continuation: cfg.continuation,
            velocities: cfg.sweep_velocities,
            converged_points,
            total_points: records.len(),
            files: vec!["sweep.csv".into()],
        },
    )?;
    Ok(if converged_points == records.len() {
        RunOutcome::Success
    } else {
        RunOutcome::Partial
    })
}

#[derive(Serialize)]
struct VelocitiesSummary<'a> {
    schema_version: u32,
    mode: &'static str,
    c: f64,
    rho: f64,
    d: usize,
    p: usize,
    grid: &'a [f64],
    h: f64,
    richardson: bool,
    transition: &'a TransitionReport,
    converged_points: usize,
    total_points: usize,
    files: Vec<String>,
}

#[derive(Serialize)]
struct VersionedTransition<'a> {
    schema_version: u32,
    #[serde(flatten)]
    report: &'a TransitionReport,
}

fn run_velocities(cfg: &RunConfig) -> Result<RunOutcome> {
    let records = run_grid(cfg, true)?;
    let v_single = bethe::sound_velocity(cfg.c, cfg.rho)?;
    let gamma = cfg.c / cfg.rho;

    let mut rows = Vec::with_capacity(records.len());
    let mut points = Vec::with_capacity(records.len());
    let mut fluct = Vec::with_capacity(records.len());
    for r in &records {
        let (vplus_sq, vminus_sq) = (
            r.vplus_sq.expect("velocity run stores v+^2"),
            r.vminus_sq.expect("velocity run stores v-^2"),
        );
        let weak = luttinger::weak_coupling_estimate(cfg.c, cfg.rho, r.g_over_c * cfg.c)?;
        rows.push(VelocityRow {
            g_over_c: r.g_over_c,
            vplus_sq,
            vminus_sq,
            vminus_sq_weak: weak.v_minus_sq_over_v_sq * v_single * v_single,
            c12_0: r.c12_0,
            gamma,
            d: cfg.d,
            p: cfg.p,
            h: cfg.h,
        });
        points.push(VelocityPoint {
            g_over_c: r.g_over_c,
            v_plus_sq: vplus_sq,
            v_minus_sq: vminus_sq,
            gamma,
        });
        fluct.push((r.g_over_c, r.c12_0));
    }

    write_atomic(&cfg.out_dir.join("velocities.csv"), &velocity_csv(&rows))?;
    let report = locate_transition(&points, &fluct, cfg.rho)?;
    write_json(
        &cfg.out_dir.join("transition.json"),
        &VersionedTransition {
            schema_version: SUMMARY_SCHEMA_VERSION,
            report: &report,
        },
    )?;
    let converged_points = records.iter().filter(|r| r.converged).count();
    write_json(
        &cfg.out_dir.join("summary.json"),
        &VelocitiesSummary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            mode: "velocities",
            c: cfg.c,
            rho: cfg.rho,
            d: cfg.d,
            p: cfg.p,
            grid: &cfg.grid,
            h: cfg.h,
            richardson: cfg.richardson,
            transition: &report,
            converged_points,
            total_points: records.len(),
            files: vec!["velocities.csv".into(), "transition.json".into()],
        },
    )?;
    Ok(if converged_points == records.len() {
        RunOutcome::Success
    } else {
        RunOutcome::Partial
    })
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Execute a validated run: create the output directory, dispatch the
/// mode, and report whether every solve converged.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cfg.mode {
        Mode::Bethe => run_bethe(cfg),
        Mode::Single | Mode::Pair => run_single_or_pair(cfg),
        Mode::Correlations => run_correlations(cfg),
        Mode::Sweep => run_sweep(cfg),
        Mode::Velocities => run_velocities(cfg),
    }
}

/// Full command-line pipeline: read the config file, apply overrides and
/// flags, validate (no files are touched on validation failure), then run.
pub fn run_cli(
    mode: &str,
    config_path: &Path,
    overrides: &[String],
    out_flag: Option<&Path>,
    workers_flag: Option<usize>,
    resume: bool,
) -> Result<RunOutcome> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        config_err(
            None,
            format!("cannot read config file {}: {e}", config_path.display()),
        )
    })?;
    let cfg = RunConfig::build(mode, &text, overrides, out_flag, workers_flag, resume)?;
    run(&cfg)
}

// ---------------------------------------------------------------------------

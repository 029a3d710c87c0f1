//! `hwm-ruin`: solve, simulate, verify and sweep from a TOML run config.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or config error,
//! 3 solver did not converge (artifacts are still written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use hwm_ruin::config::{PolicySource, RunConfig, RunManifest, SweepAxis, SCHEMA_VERSION};
use hwm_ruin::dynamics::{self, ConstantPolicy, Policy};
use hwm_ruin::grid::Grid;
use hwm_ruin::params::AmbiguitySet;
use hwm_ruin::solver::{howard_solve, Solution};
use hwm_ruin::{io, verify, Model, State};

const EXIT_CHECKS: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NONCONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "hwm-ruin", version, about = "Ruin probabilities under high-watermark fees and model ambiguity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config and HWM_RUIN_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; overrides output.threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Solve the HJB system on the configured grid.
    Solve,
    /// Monte-Carlo estimate of the objective under a policy.
    Simulate,
    /// Run the quick or full verification suite.
    Verify,
    /// Re-solve over the configured parameter axis.
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }
}

/// Failure carrying its exit code.
struct Fail(u8, String);

impl<E: std::fmt::Display> From<E> for Fail {
    fn from(e: E) -> Self {
        Fail(EXIT_CONFIG, e.to_string())
    }
}

struct Ctx {
    cfg: RunConfig,
    config_dir: PathBuf,
    out: PathBuf,
    stem: String,
    threads: usize,
    quiet: bool,
    started: f64,
    files: Vec<String>,
}

impl Ctx {
    fn write(&mut self, suffix: &str, text: &str) -> Result<(), Fail> {
        let name = format!("{}-{suffix}", self.stem);
        io::write_text(&self.out.join(&name), text)?;
        self.files.push(name);
        Ok(())
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn finish(&mut self, command: Command, seeds: Vec<u64>) -> Result<(), Fail> {
        let name = format!("{}-manifest.json", self.stem);
        self.files.push(name.clone());
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION.to_string(),
            command: command.name().to_string(),
            config: self.cfg.clone(),
            config_hash: self.cfg.hash(),
            seeds,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: self.threads,
            started_unix: self.started,
            finished_unix: now(),
            files: self.files.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        io::write_text(&self.out.join(name), &text)?;
        Ok(())
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Fail> {
    let path = cli.config.as_ref().ok_or_else(|| Fail(EXIT_CONFIG, "--config PATH is required".into()))?;
    let cfg = RunConfig::from_path(path).map_err(|e| Fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("HWM_RUIN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Fail(EXIT_CONFIG, format!("{}: {e}", out.display())))?;
    let threads = cli.threads.or(cfg.output.threads).unwrap_or_else(rayon::current_num_threads);
    if threads == 0 {
        return Err(Fail(EXIT_CONFIG, "--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let mut ctx = Ctx {
        stem: cfg.stem(cli.command.name()),
        cfg,
        config_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        out,
        threads,
        quiet: cli.quiet,
        started: now(),
        files: Vec::new(),
    };
    pool.install(|| match cli.command {
        Command::Solve => run_solve(&mut ctx),
        Command::Simulate => run_simulate(&mut ctx),
        Command::Verify => run_verify(&mut ctx),
        Command::Sweep => run_sweep(&mut ctx),
    })
}

fn solve(ctx: &Ctx, m: &Model) -> Result<(Grid, Solution), Fail> {
    let grid = ctx.cfg.build_grid(m)?;
    ctx.note(format!("solving on {}x{}x{} nodes", grid.nx, grid.ny1, grid.ny2));
    let sol = howard_solve(m, &grid, &ctx.cfg.solver)?;
    let r = &sol.report;
    ctx.note(format!(
        "{} after {} iterations: interior {:.3e}, b1 {:.3e}, b2 {:.3e} ({:.2}s)",
        r.stop_reason(),
        r.iterations,
        r.residual_interior,
        r.residual_b1,
        r.residual_b2,
        r.wall_seconds
    ));
    Ok((grid, sol))
}

fn run_solve(ctx: &mut Ctx) -> Result<u8, Fail> {
    let m = ctx.cfg.model()?;
    let (grid, sol) = solve(ctx, &m)?;
    ctx.write("field.csv", &io::field_csv(&sol.field, &sol.policy))?;
    ctx.write("slice.csv", &io::slice_csv(&sol.field, &grid, ctx.cfg.output.slice_y2_index))?;
    ctx.write("report.json", &serde_json::to_string_pretty(&sol.report)?)?;
    ctx.finish(Command::Solve, Vec::new())?;
    Ok(if sol.report.converged { 0 } else { EXIT_NONCONVERGED })
}

fn run_simulate(ctx: &mut Ctx) -> Result<u8, Fail> {
    let m = ctx.cfg.model()?;
    let sim = ctx.cfg.sim.sim_config();
    let z0 = ctx.cfg.sim.initial_state();
    let mut converged = true;
    let policy: Box<dyn Policy> = match &ctx.cfg.sim.policy {
        PolicySource::Constant { pi, theta } => Box::new(ConstantPolicy { pi: *pi, theta: *theta }),
        PolicySource::Csv { path } => {
            let path = if path.is_relative() { ctx.config_dir.join(path) } else { path.clone() };
            let (_, policy) = io::read_field_csv(&path, &m)?;
            Box::new(policy)
        }
        PolicySource::Solved => {
            let (_, sol) = solve(ctx, &m)?;
            converged = sol.report.converged;
            Box::new(sol.policy)
        }
    };
    ctx.note(format!("simulating {} paths from ({}, {}, {})", sim.n_paths, z0.x, z0.y1, z0.y2));
    let est = dynamics::estimate_objective(&m, policy.as_ref(), z0, &sim)?;
    ctx.note(format!(
        "objective {:.6} +- {:.6} (ruin {:.4}, truncated {:.4})",
        est.mean, est.stderr, est.ruin_fraction, est.truncation_fraction
    ));
    ctx.write("estimate.json", &serde_json::to_string_pretty(&est)?)?;
    if sim.store_trajectories {
        // Re-run the leading paths on their own streams; results match the estimate's paths.
        for k in 0..ctx.cfg.sim.stored_paths.min(sim.n_paths) {
            let mut rng = dynamics::path_rng(sim.seed, k as u64);
            let out = dynamics::simulate_path(&m, policy.as_ref(), z0, &sim, &mut rng)?;
            let traj = out.trajectory.unwrap_or_default();
            ctx.write(&format!("path-{k:04}.csv"), &io::trajectory_csv(&traj))?;
        }
    }
    ctx.finish(Command::Simulate, vec![sim.seed])?;
    Ok(if converged { 0 } else { EXIT_NONCONVERGED })
}

fn run_verify(ctx: &mut Ctx) -> Result<u8, Fail> {
    let m = ctx.cfg.model()?;
    let suite = ctx.cfg.suite_config(&m);
    ctx.note(format!("running the {:?} suite", suite.suite));
    let report = verify::run_suite(&m.params, &suite)?;
    ctx.write("verify.json", &report.to_json())?;
    let text = report.to_text();
    ctx.write("verify.txt", &text)?;
    if !ctx.quiet {
        print!("{text}");
    }
    ctx.finish(Command::Verify, vec![suite.sim.seed])?;
    if report.all_passed() {
        Ok(0)
    } else {
        eprintln!("failed checks: {}", report.failed().join(", "));
        Ok(EXIT_CHECKS)
    }
}

struct SweepRow {
    param: &'static str,
    value: f64,
    probes: Vec<f64>,
    sol: Solution,
}

fn run_sweep(ctx: &mut Ctx) -> Result<u8, Fail> {
    let sweep = ctx
        .cfg
        .sweep
        .clone()
        .ok_or_else(|| Fail(EXIT_CONFIG, "sweep: section [sweep] is required".into()))?;
    let probes: Vec<State> = sweep.probes.iter().map(|p| State::new(p[0], p[1], p[2])).collect();
    let mut values = sweep.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let base = ctx.cfg.market.clone();
    let mut runs: Vec<(&'static str, f64, hwm_ruin::MarketParams)> = values
        .iter()
        .map(|&v| {
            let mut p = base.clone();
            match sweep.axis {
                SweepAxis::Epsilon => p.epsilon = v,
                SweepAxis::Q => p.q = [v, v],
            }
            (axis_name(sweep.axis), v, p)
        })
        .collect();
    if sweep.axis == SweepAxis::Epsilon && sweep.include_baseline {
        let mut p = base.clone();
        p.ambiguity_set = AmbiguitySet::Zero;
        runs.push(("ambiguity_zero", 0.0, p));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for (param, value, p) in runs {
        let m = Model::new(p)?;
        ctx.note(format!("{param} = {value}"));
        let (grid, sol) = solve(ctx, &m)?;
        let at = probes.iter().map(|z| sol.field.interpolate(&grid, z)).collect::<Result<Vec<_>, _>>()?;
        rows.push(SweepRow { param, value, probes: at, sol });
    }
    let slack = ctx.cfg.verify.tolerances.eps_slack;
    let mut csv = String::from("param,value");
    for i in 0..probes.len() {
        csv.push_str(&format!(",probe_{}", i + 1));
    }
    csv.push_str(",iterations,converged,residual_interior,residual_b1,residual_b2,monotone\n");
    let mut all_converged = true;
    for (r, row) in rows.iter().enumerate() {
        // Rows are in increasing parameter order; a row is monotone when no probe
        // dropped by more than the slack relative to the previous swept value.
        let monotone = match r.checked_sub(1).map(|p| &rows[p]) {
            Some(prev) if prev.param == row.param => {
                row.probes.iter().zip(&prev.probes).all(|(a, b)| *a >= b - slack)
            }
            _ => true,
        };
        let rep = &row.sol.report;
        all_converged &= rep.converged;
        let cells: Vec<String> = row.probes.iter().map(|v| io::fmt_f64(*v)).collect();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.param,
            io::fmt_f64(row.value),
            cells.join(","),
            rep.iterations,
            rep.converged,
            io::fmt_f64(rep.residual_interior),
            io::fmt_f64(rep.residual_b1),
            io::fmt_f64(rep.residual_b2),
            if sweep.axis == SweepAxis::Epsilon { monotone.to_string() } else { String::new() }
        ));
    }
    ctx.write("sweep.csv", &csv)?;
    if !ctx.quiet {
        print!("{csv}");
    }
    ctx.finish(Command::Sweep, Vec::new())?;
    Ok(if all_converged { 0 } else { EXIT_NONCONVERGED })
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Epsilon => "epsilon",
        SweepAxis::Q => "q",
    }
}

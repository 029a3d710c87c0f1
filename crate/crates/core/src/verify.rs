//! Executable checks: closed-form reductions, the sub/super-solution bracket,
//! Monte-Carlo/PDE consistency and truncation sensitivity.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ConstantPolicy, Policy, SimConfig, SimError};
use crate::grid::{build_grid, DiscreteField, Grid, GridError, NodeKind};
use crate::model::{self, Model, State};
use crate::params::{AmbiguitySet, ControlSet, MarketParams};
use crate::solver::{self, howard_solve, SolveError, Solution, SolverConfig};

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Params(#[from] crate::params::ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    /// Pass when `measured <= tolerance`.
    pub fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }

    pub fn flag(name: &str, passed: bool, measured: f64, detail: impl Into<String>) -> Self {
        CheckResult { name: name.to_string(), passed, measured, tolerance: 0.0, detail: detail.into() }
    }
}

/// Ordered collection of named checks; each name appears once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    /// Register a check. Panics on a duplicate name.
    pub fn push(&mut self, check: CheckResult) {
        assert!(
            self.checks.iter().all(|c| c.name != check.name),
            "check {} registered twice",
            check.name
        );
        self.checks.push(check);
    }

    pub fn extend(&mut self, checks: impl IntoIterator<Item = CheckResult>) {
        for c in checks {
            self.push(c);
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.checks.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Fixed-width summary table, one line per check.
    pub fn to_text(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:<4}  {:>12}  {:>12}  detail", "check", "ok", "measured", "tolerance");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<width$}  {:<4}  {:>12.4e}  {:>12.4e}  {}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.measured,
                c.tolerance,
                c.detail
            );
        }
        let _ = writeln!(
            out,
            "{} of {} checks passed",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len()
        );
        out
    }
}

/// Worst violation of `𝔘(x) ≤ field ≤ 𝔭(x)` over the grid, split by side.
pub fn sandwich_violation(field: &DiscreteField, m: &Model, grid: &Grid) -> (f64, f64) {
    let mut below = 0.0f64;
    let mut above = 0.0f64;
    for (n, &v) in field.values.iter().enumerate() {
        let x = grid.state(n).x;
        let lower = model::frictionless_value(m, x).unwrap_or(1.0);
        let upper = model::no_invest_value(m, x).unwrap_or(1.0);
        below = below.max(lower - v);
        above = above.max(v - upper);
    }
    (below, above)
}

/// `𝔘(x) − tol ≤ field(x, y) ≤ 𝔭(x) + tol` at every node.
pub fn sandwich_check(field: &DiscreteField, m: &Model, grid: &Grid, tol: f64) -> CheckResult {
    let (below, above) = sandwich_violation(field, m, grid);
    CheckResult::at_most(
        "sandwich",
        below.max(above),
        tol,
        format!("below lower bound by {below:.3e}, above upper bound by {above:.3e}"),
    )
}

/// Parameters with fees and ambiguity switched off.
pub fn frictionless_params(p: &MarketParams) -> MarketParams {
    let mut out = p.clone();
    out.q = [0.0, 0.0];
    out.ambiguity_set = AmbiguitySet::Zero;
    out
}

/// 𝒦 = {0} without fees: the strict oblique face rows are consistent with
/// 𝔭 only when q = 0, since ℬⁱ𝔭 = qⁱ𝔭'.
pub fn no_invest_params(p: &MarketParams) -> MarketParams {
    let mut out = p.clone();
    out.control_set = ControlSet::zero();
    out.q = [0.0, 0.0];
    out
}

/// Same y-axes, `2(nx − 1) + 1` wealth nodes.
pub fn refine_x(m: &Model, grid: &Grid) -> Result<Grid, GridError> {
    build_grid(m, 2 * (grid.nx - 1) + 1, grid.ny1, grid.ny2, grid.y_max)
}

fn sup_error(field: &DiscreteField, grid: &Grid, exact: impl Fn(f64) -> f64) -> f64 {
    field
        .values
        .iter()
        .enumerate()
        .map(|(n, v)| (v - exact(grid.state(n).x)).abs())
        .fold(0.0, f64::max)
}

/// Largest increase of the field along any x grid line.
pub fn x_monotonicity_violation(field: &DiscreteField, grid: &Grid) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..grid.ny1 {
        for k in 0..grid.ny2 {
            for i in 1..grid.nx {
                let d = field.at(grid, i, j, k) - field.at(grid, i - 1, j, k);
                worst = worst.max(d);
            }
        }
    }
    worst
}

/// Largest spread of the field along y at fixed x.
pub fn y_variation(field: &DiscreteField, grid: &Grid) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..grid.nx {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..grid.ny1 {
            for k in 0..grid.ny2 {
                let v = field.at(grid, i, j, k);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        worst = worst.max(hi - lo);
    }
    worst
}

/// Tolerances of the reduction checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub frictionless: f64,
    pub order_lo: f64,
    pub order_hi: f64,
    pub y_invariance: f64,
    pub no_invest: f64,
    pub log_slope_rel: f64,
    pub sandwich: f64,
    pub truncation: f64,
    pub eps_slack: f64,
    pub eps_limit: f64,
    pub monotone_x: f64,
    pub watermark: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            frictionless: 2e-2,
            order_lo: 0.7,
            order_hi: 1.3,
            y_invariance: 5e-3,
            no_invest: 1e-2,
            log_slope_rel: 0.05,
            sandwich: 2e-2,
            truncation: 5e-3,
            eps_slack: 1e-3,
            eps_limit: 5e-3,
            monotone_x: 1e-9,
            watermark: 1e-10,
        }
    }
}

/// Frictionless reduction: sup error against 𝔘, observed order under one
/// x-refinement, y-invariance, and whether 𝒦 contains the optimal position.
pub fn reduction_check_frictionless(
    p: &MarketParams,
    grid: &Grid,
    cfg: &SolverConfig,
    tol: &Tolerances,
) -> Result<Vec<CheckResult>, VerifyError> {
    let m = Model::new(frictionless_params(p))?;
    let exact = |x: f64| model::frictionless_value(&m, x).unwrap_or(1.0);
    let coarse = howard_solve(&m, grid, cfg)?;
    let fine_grid = refine_x(&m, grid)?;
    let fine = howard_solve(&m, &fine_grid, cfg)?;
    let e1 = sup_error(&coarse.field, grid, exact);
    let e2 = sup_error(&fine.field, &fine_grid, exact);
    let order = (e1 / e2).log2();

    // 𝒦 must contain π*(x) for every x in [R, c/r]; π* is linear in x.
    let lattice = m.params.control_set.lattice();
    let step = lattice_step(&m.params.control_set);
    let covered = [m.params.ruin_level, m.params.safe_level()].iter().all(|&x| {
        model::frictionless_policy(&m, x)
            .map(|pi| m.params.control_set.contains(pi))
            .unwrap_or(false)
    });
    let pi_r = model::frictionless_policy(&m, m.params.ruin_level).unwrap_or([f64::NAN; 2]);
    let note = if covered {
        String::new()
    } else {
        format!(
            "; control set too small: pi*(R) = ({:.3}, {:.3}) lies outside K",
            pi_r[0], pi_r[1]
        )
    };
    Ok(vec![
        CheckResult::at_most(
            "frictionless_error",
            e1,
            tol.frictionless,
            format!(
                "sup |field - U| on {}x{}x{} ({} controls, lattice step {step:.3}){note}",
                grid.nx,
                grid.ny1,
                grid.ny2,
                lattice.len()
            ),
        ),
        CheckResult {
            name: "frictionless_order".into(),
            passed: order >= tol.order_lo && order <= tol.order_hi,
            measured: order,
            tolerance: tol.order_lo,
            detail: format!(
                "log2(e(h)/e(h/2)) with e(h) = {e1:.4e}, e(h/2) = {e2:.4e}; accepted range [{}, {}]{note}",
                tol.order_lo, tol.order_hi
            ),
        },
        CheckResult::at_most(
            "frictionless_y_invariance",
            y_variation(&coarse.field, grid),
            tol.y_invariance,
            "max over x of the field's spread along y with q = 0",
        ),
    ])
}

fn lattice_step(set: &ControlSet) -> f64 {
    match set {
        ControlSet::Box { lo, hi, points } => (0..2)
            .map(|i| if points[i] > 1 { (hi[i] - lo[i]) / (points[i] - 1) as f64 } else { 0.0 })
            .fold(0.0, f64::max),
        ControlSet::Finite { .. } => f64::NAN,
    }
}

/// No-investment reduction: sup error against 𝔭, exact Dirichlet faces,
/// first-order refinement and the log-slope `λ/r` in the middle third.
pub fn reduction_check_noinvest(
    p: &MarketParams,
    grid: &Grid,
    cfg: &SolverConfig,
    tol: &Tolerances,
) -> Result<Vec<CheckResult>, VerifyError> {
    let m = Model::new(no_invest_params(p))?;
    let exact = |x: f64| model::no_invest_value(&m, x).unwrap_or(0.0);
    let sol = howard_solve(&m, grid, cfg)?;
    let err = sup_error(&sol.field, grid, exact);

    let mut face = 0.0f64;
    for (n, &v) in sol.field.values.iter().enumerate() {
        match grid.kind(n) {
            NodeKind::Ruin => face = face.max((v - 1.0).abs()),
            NodeKind::Safe => face = face.max(v.abs()),
            _ => {}
        }
    }

    // log-slope of the field against log(c − rx) between the thirds of the range
    let a = grid.nx / 3;
    let b = 2 * grid.nx / 3;
    let pr = &m.params;
    let (xa, xb) = (grid.x(a), grid.x(b));
    let (va, vb) = (sol.field.at(grid, a, 1, 1), sol.field.at(grid, b, 1, 1));
    let slope = (vb.ln() - va.ln()) / ((pr.c - pr.r * xb).ln() - (pr.c - pr.r * xa).ln());
    let target = pr.lambda_d / pr.r;

    let fine_grid = refine_x(&m, grid)?;
    let fine = howard_solve(&m, &fine_grid, cfg)?;
    let e2 = sup_error(&fine.field, &fine_grid, exact);
    let order = (err / e2).log2();

    Ok(vec![
        CheckResult::at_most(
            "noinvest_error",
            err,
            tol.no_invest,
            format!("sup |field - p| on {} x-nodes", grid.nx),
        ),
        CheckResult::at_most("noinvest_dirichlet_exact", face, 0.0, "Dirichlet faces equal 1 and 0"),
        CheckResult::at_most(
            "noinvest_log_slope",
            (slope / target - 1.0).abs(),
            tol.log_slope_rel,
            format!("slope {slope:.4} vs lambda_d/r = {target:.4} on [{xa:.2}, {xb:.2}]"),
        ),
        CheckResult {
            name: "noinvest_order".into(),
            passed: order >= tol.order_lo && order <= tol.order_hi,
            measured: order,
            tolerance: tol.order_lo,
            detail: format!("e(h) = {err:.4e}, e(h/2) = {e2:.4e}"),
        },
    ])
}

/// Solver-contract checks on a converged general solve.
pub fn solution_checks(
    sol: &Solution,
    m: &Model,
    grid: &Grid,
    cfg: &SolverConfig,
    tol: &Tolerances,
) -> Result<Vec<CheckResult>, VerifyError> {
    let r = &sol.report;
    let recomputed = solver::assemble_residual_with(&sol.field, m, grid, cfg.pi_lattice)?;
    let report_res = [r.residual_interior, r.residual_b1, r.residual_b2, r.residual_corner, r.residual_far];
    let again = [
        recomputed.stats.interior_sup,
        recomputed.stats.b1_sup,
        recomputed.stats.b2_sup,
        recomputed.stats.corner_sup,
        recomputed.stats.far_sup,
    ];
    let cert = report_res.iter().zip(&again).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (lo, hi) = sol
        .field
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range_violation = (-lo).max(hi - 1.0).max(0.0);
    let faces = recomputed.stats.b1_sup.max(recomputed.stats.b2_sup).max(recomputed.stats.corner_sup);
    let history_rise = r
        .residual_history
        .windows(2)
        .skip(1)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    Ok(vec![
        CheckResult::flag(
            "solver_converged",
            r.converged,
            r.residual_history.last().copied().unwrap_or(f64::NAN),
            format!("{} after {} iterations", r.stop_reason(), r.iterations),
        ),
        CheckResult::at_most(
            "boundary_residual",
            faces,
            cfg.tol,
            format!(
                "sup |B1_h| = {:.3e}, sup |B2_h| = {:.3e}, corner = {:.3e}",
                recomputed.stats.b1_sup, recomputed.stats.b2_sup, recomputed.stats.corner_sup
            ),
        ),
        CheckResult::at_most("residual_certificate", cert, 1e-12, "report residuals reproduced from the field"),
        CheckResult::at_most("value_in_unit_interval", range_violation, 0.0, format!("min {lo:.3e}, max {hi:.6}")),
        CheckResult::at_most(
            "monotone_in_x",
            x_monotonicity_violation(&sol.field, grid),
            tol.monotone_x,
            "largest increase along an x grid line",
        ),
        CheckResult::flag(
            "residual_history",
            history_rise <= cfg.inner_tol || r.damping_engaged,
            history_rise,
            format!("largest rise after the first iteration; damping engaged = {}", r.damping_engaged),
        ),
        sandwich_check(&sol.field, m, grid, tol.sandwich),
    ])
}

/// Monte-Carlo objective under the feedback policy at each probe against the
/// grid value, with tolerance `3·stderr + c_disc·(hx + hy¹ + hy²)`.
pub fn mc_crosscheck<P: Policy + ?Sized>(
    field: &DiscreteField,
    policy: &P,
    m: &Model,
    grid: &Grid,
    probes: &[State],
    sim: &SimConfig,
    c_disc: f64,
) -> Result<Vec<CheckResult>, VerifyError> {
    let slack = c_disc * (grid.hx + grid.hy[0] + grid.hy[1]);
    let mut out = Vec::with_capacity(probes.len());
    for (i, z) in probes.iter().enumerate() {
        if !grid.contains(z) {
            return Err(GridError::OutsideGrid(*z).into());
        }
        let v = field.interpolate(grid, z)?;
        let est = dynamics::estimate_objective(m, policy, *z, sim)?;
        let allowed = 3.0 * est.stderr + slack;
        out.push(CheckResult::at_most(
            &format!("mc_probe_{}", i + 1),
            (est.mean - v).abs(),
            allowed,
            format!(
                "z = ({:.2}, {:.2}, {:.2}): MC {:.5} +- {:.5} (n = {}, truncated {:.4}), grid {:.5}",
                z.x, z.y1, z.y2, est.mean, est.stderr, est.n, est.truncation_fraction, v
            ),
        ));
    }
    Ok(out)
}

/// Ruin frequency with π ≡ 0 from `x0` against the closed form `𝔭(x0)`.
pub fn mc_noinvest_check(m: &Model, x0: f64, sim: &SimConfig) -> Result<CheckResult, VerifyError> {
    let est = dynamics::estimate_objective(m, &ConstantPolicy::idle(), State::new(x0, 0.0, 0.0), sim)?;
    let exact = model::no_invest_value(m, x0).map_err(|_| GridError::OutsideGrid(State::new(x0, 0.0, 0.0)))?;
    Ok(CheckResult::at_most(
        "mc_noinvest",
        (est.mean - exact).abs(),
        3.0 * est.stderr,
        format!("MC {:.5} +- {:.5} vs p(x0) = {exact:.5} (n = {})", est.mean, est.stderr, est.n),
    ))
}

/// Watermark identity and complementarity along simulated paths of a feedback policy.
pub fn watermark_check<P: Policy + ?Sized>(
    m: &Model,
    policy: &P,
    z0: State,
    sim: &SimConfig,
    tol: f64,
) -> Result<Vec<CheckResult>, VerifyError> {
    sim.validate()?;
    let mut worst = 0.0f64;
    let mut violations = 0usize;
    let mut steps = 0usize;
    let mut pushes = 0usize;
    let mut cfg = sim.clone();
    cfg.store_trajectories = true;
    for k in 0..sim.n_paths as u64 {
        let mut rng = dynamics::path_rng(sim.seed, k);
        let out = dynamics::simulate_path(m, policy, z0, &cfg, &mut rng)?;
        let traj = out.trajectory.unwrap_or_default();
        let r = dynamics::watermark_report(&traj, m.params.q);
        worst = worst.max(r[0]).max(r[1]);
        for w in traj.windows(2) {
            steps += 1;
            for i in 0..2 {
                if w[1].m[i] > w[0].m[i] {
                    pushes += 1;
                    if w[1].y[i] != 0.0 {
                        violations += 1;
                    }
                }
            }
        }
    }
    Ok(vec![
        CheckResult::at_most(
            "watermark_identity",
            worst,
            tol,
            format!("max |Mbar - y0 - (1+q)(M - y0)| over {} paths, {steps} steps", sim.n_paths),
        ),
        CheckResult::at_most(
            "complementarity",
            violations as f64,
            0.0,
            format!("steps with dM > 0 and Y != 0, out of {pushes} reflection events"),
        ),
    ])
}

/// Re-solve on `[0, 2·y_max]²` with the same spacing and compare on the original box.
pub fn truncation_sensitivity(
    m: &Model,
    grid: &Grid,
    base: &DiscreteField,
    cfg: &SolverConfig,
    tol: f64,
) -> Result<CheckResult, VerifyError> {
    let big = build_grid(
        m,
        grid.nx,
        2 * (grid.ny1 - 1) + 1,
        2 * (grid.ny2 - 1) + 1,
        [2.0 * grid.y_max[0], 2.0 * grid.y_max[1]],
    )?;
    let sol = howard_solve(m, &big, cfg)?;
    let diff = restricted_difference(base, grid, &sol.field, &big);
    Ok(CheckResult::at_most(
        "truncation_sensitivity",
        diff,
        tol,
        format!("sup difference on the original box after doubling y_max to {:.3}", big.y_max[0]),
    ))
}

/// Sup difference between a field and a larger-box field on shared nodes
/// (the larger grid must share spacing and origin).
pub fn restricted_difference(small: &DiscreteField, g: &Grid, large: &DiscreteField, big: &Grid) -> f64 {
    let mut diff = 0.0f64;
    for i in 0..g.nx {
        for j in 0..g.ny1 {
            for k in 0..g.ny2 {
                let a = small.at(g, i, j, k);
                let b = large.at(big, i, j, k);
                diff = diff.max((a - b).abs());
            }
        }
    }
    diff
}

/// Values at probes for each ε, checked for monotonicity, plus the ε → 0
/// limit against the ℒ = {0} solve.
pub fn epsilon_checks(
    p: &MarketParams,
    grid: &Grid,
    cfg: &SolverConfig,
    eps_values: &[f64],
    probes: &[State],
    tol: &Tolerances,
) -> Result<Vec<CheckResult>, VerifyError> {
    let mut rows: Vec<(f64, Vec<f64>, DiscreteField)> = Vec::new();
    for &eps in eps_values {
        let mut q = p.clone();
        q.epsilon = eps;
        let m = Model::new(q)?;
        let sol = howard_solve(&m, grid, cfg)?;
        let vals = probes
            .iter()
            .map(|z| sol.field.interpolate(grid, z))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((eps, vals, sol.field));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut worst_drop = 0.0f64;
    for w in rows.windows(2) {
        for (a, b) in w[0].1.iter().zip(&w[1].1) {
            worst_drop = worst_drop.max(a - b);
        }
    }
    let mut zero = p.clone();
    zero.ambiguity_set = AmbiguitySet::Zero;
    let mz = Model::new(zero)?;
    let base = howard_solve(&mz, grid, cfg)?;
    let smallest = rows.first().map(|r| (r.0, r.2.sup_distance(&base.field)));
    let mut out = vec![CheckResult::at_most(
        "epsilon_monotone",
        worst_drop,
        tol.eps_slack,
        format!(
            "largest decrease of a probe value as epsilon grows over {:?}",
            rows.iter().map(|r| r.0).collect::<Vec<_>>()
        ),
    )];
    if let Some((eps, d)) = smallest {
        out.push(CheckResult::at_most(
            "epsilon_zero_limit",
            d,
            tol.eps_limit,
            format!("sup |field(eps = {eps:e}) - field(L = {{0}})|"),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Quick,
    Full,
}

/// Everything a suite run needs besides the market parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub suite: Suite,
    pub grid: (usize, usize, usize, [f64; 2]),
    pub solver: SolverConfig,
    pub sim: SimConfig,
    pub probes: Vec<State>,
    pub c_disc: f64,
    pub eps_values: Vec<f64>,
    pub watermark_paths: usize,
    pub mc_x0: f64,
    pub tolerances: Tolerances,
}

/// Run the selected suite. Every check is registered exactly once.
pub fn run_suite(p: &MarketParams, cfg: &SuiteConfig) -> Result<VerifyReport, VerifyError> {
    let m = Model::new(p.clone())?;
    let (nx, ny1, ny2, y_max) = cfg.grid;
    let grid = build_grid(&m, nx, ny1, ny2, y_max)?;
    let tol = &cfg.tolerances;
    let mut report = VerifyReport::default();

    let mut nx_checks = reduction_check_noinvest(p, &grid, &cfg.solver, tol)?;
    let mut fr_checks = reduction_check_frictionless(p, &grid, &cfg.solver, tol)?;
    if cfg.suite == Suite::Quick {
        nx_checks.retain(|c| c.name != "noinvest_order" && c.name != "noinvest_log_slope");
        fr_checks.retain(|c| c.name != "frictionless_order");
    }
    report.extend(nx_checks);
    report.extend(fr_checks);

    let sol = howard_solve(&m, &grid, &cfg.solver)?;
    report.extend(solution_checks(&sol, &m, &grid, &cfg.solver, tol)?);

    let mut wm_sim = cfg.sim.clone();
    wm_sim.n_paths = cfg.watermark_paths;
    let start = cfg.probes.first().copied().unwrap_or(State::new(0.5 * (grid.x_lo + grid.x_hi), 0.0, 0.0));
    report.extend(watermark_check(&m, &sol.policy, start, &wm_sim, tol.watermark)?);

    let mut mc_sim = cfg.sim.clone();
    if cfg.suite == Suite::Quick {
        mc_sim.n_paths = mc_sim.n_paths.min(20_000);
    }
    report.push(mc_noinvest_check(&m, cfg.mc_x0, &mc_sim)?);

    if cfg.suite == Suite::Full {
        report.extend(mc_crosscheck(&sol.field, &sol.policy, &m, &grid, &cfg.probes, &cfg.sim, cfg.c_disc)?);
        report.extend(epsilon_checks(p, &grid, &cfg.solver, &cfg.eps_values, &cfg.probes, tol)?);
        report.push(truncation_sensitivity(&m, &grid, &sol.field, &cfg.solver, tol.truncation)?);
    }
    Ok(report)
}

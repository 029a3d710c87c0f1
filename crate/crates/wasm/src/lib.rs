//! Browser bindings for the demo page in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs no generated TypeScript types. The reference market is used
//! throughout; the page varies the ambiguity level, the fee rate and the
//! starting wealth.

use hwm_ruin::dynamics::{self, SimConfig};
use hwm_ruin::grid::build_grid;
use hwm_ruin::solver::{howard_solve, Solution, SolverConfig};
use hwm_ruin::{model, MarketParams, Model, State};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const NY: usize = 7;
const Y_MAX: f64 = 6.0;
const SHOWN_PATHS: usize = 6;

fn market(epsilon: f64, q: f64) -> Result<Model, String> {
    let mut p = MarketParams::reference();
    p.epsilon = epsilon;
    p.q = [q, q];
    Model::new(p).map_err(|e| e.to_string())
}

fn coarse_solve(m: &Model, nx: usize) -> Result<(hwm_ruin::grid::Grid, Solution), String> {
    let nx = nx.clamp(11, 81);
    let grid = build_grid(m, nx, NY, NY, [Y_MAX, Y_MAX]).map_err(|e| e.to_string())?;
    let sol = howard_solve(m, &grid, &SolverConfig::default()).map_err(|e| e.to_string())?;
    Ok((grid, sol))
}

/// Closed-form frictionless and no-investment probabilities and the
/// frictionless position on `n` wealth points.
pub fn curves_json(lambda_d: f64, n: usize) -> Result<Value, String> {
    let mut p = MarketParams::reference();
    p.lambda_d = lambda_d;
    let m = Model::new(p).map_err(|e| e.to_string())?;
    let (lo, hi) = (m.params.ruin_level, m.params.safe_level());
    let n = n.max(2);
    let mut xs = Vec::with_capacity(n);
    let (mut u, mut pn, mut pi1, mut pi2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        xs.push(x);
        u.push(model::frictionless_value(&m, x).map_err(|e| e.to_string())?);
        pn.push(model::no_invest_value(&m, x).map_err(|e| e.to_string())?);
        let pi = model::frictionless_policy(&m, x).map_err(|e| e.to_string())?;
        pi1.push(pi[0]);
        pi2.push(pi[1]);
    }
    Ok(json!({
        "kappa": model::kappa(&m),
        "x": xs,
        "frictionless": u,
        "no_invest": pn,
        "pi1": pi1,
        "pi2": pi2,
    }))
}

/// Solved ruin probability on the `y2 = 0` slice, with the closed-form
/// bounds along `y = 0` for comparison.
pub fn solve_json(epsilon: f64, q: f64, nx: usize) -> Result<Value, String> {
    let m = market(epsilon, q)?;
    let (g, sol) = coarse_solve(&m, nx)?;
    let xs: Vec<f64> = (0..g.nx).map(|i| g.x(i)).collect();
    let ys: Vec<f64> = (0..g.ny1).map(|j| g.y1(j)).collect();
    let rows: Vec<Vec<f64>> = (0..g.ny1).map(|j| (0..g.nx).map(|i| sol.field.at(&g, i, j, 0)).collect()).collect();
    let pi: Vec<[f64; 2]> = (0..g.nx).map(|i| sol.policy.pi[g.index(i, 0, 0)]).collect();
    let lower: Vec<f64> = xs.iter().map(|&x| model::frictionless_value(&m, x).unwrap_or(f64::NAN)).collect();
    let upper: Vec<f64> = xs.iter().map(|&x| model::no_invest_value(&m, x).unwrap_or(f64::NAN)).collect();
    let r = &sol.report;
    Ok(json!({
        "x": xs,
        "y1": ys,
        "value": rows,
        "pi": pi,
        "frictionless": lower,
        "no_invest": upper,
        "converged": r.converged,
        "iterations": r.iterations,
        "residual": r.residual_interior.max(r.residual_b1).max(r.residual_b2),
    }))
}

/// Monte-Carlo estimate under the solved feedback policy from `(x0, 0, 0)`,
/// plus the first few wealth and distance trajectories.
pub fn simulate_json(epsilon: f64, q: f64, x0: f64, n_paths: usize, seed: u64) -> Result<Value, String> {
    let m = market(epsilon, q)?;
    let (_, sol) = coarse_solve(&m, 31)?;
    let z0 = State::new(x0, 0.0, 0.0);
    let sim = SimConfig { dt: 0.05, t_max: 150.0, n_paths: n_paths.clamp(1, 20_000), seed, store_trajectories: false };
    let est = dynamics::estimate_objective(&m, &sol.policy, z0, &sim).map_err(|e| e.to_string())?;
    let stored = SimConfig { store_trajectories: true, ..sim };
    let mut paths = Vec::new();
    for k in 0..SHOWN_PATHS.min(sim.n_paths) {
        let mut rng = dynamics::path_rng(seed, k as u64);
        let out = dynamics::simulate_path(&m, &sol.policy, z0, &stored, &mut rng).map_err(|e| e.to_string())?;
        let traj = out.trajectory.unwrap_or_default();
        paths.push(json!({
            "t": traj.iter().map(|p| p.t).collect::<Vec<_>>(),
            "x": traj.iter().map(|p| p.x).collect::<Vec<_>>(),
            "y1": traj.iter().map(|p| p.y[0]).collect::<Vec<_>>(),
            "status": out.terminal.status.label(),
        }));
    }
    Ok(json!({
        "mean": est.mean,
        "stderr": est.stderr,
        "ruin_fraction": est.ruin_fraction,
        "truncation_fraction": est.truncation_fraction,
        "penalty_mean": est.penalty_mean,
        "pde": sol.field.interpolate(&sol.policy.grid, &z0).map_err(|e| e.to_string())?,
        "paths": paths,
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn curves(lambda_d: f64, n: usize) -> Result<String, JsError> {
    to_js(curves_json(lambda_d, n))
}

#[wasm_bindgen]
pub fn solve(epsilon: f64, q: f64, nx: usize) -> Result<String, JsError> {
    to_js(solve_json(epsilon, q, nx))
}

#[wasm_bindgen]
pub fn simulate(epsilon: f64, q: f64, x0: f64, n_paths: usize, seed: u64) -> Result<String, JsError> {
    to_js(simulate_json(epsilon, q, x0, n_paths, seed))
}

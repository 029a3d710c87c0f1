//! Finite-difference HJB solver with Howard policy iteration.
//!
//! Discrete system on the truncated box:
//!
//! * interior: `ℱ_h[φ] = λφ − inf_π sup_θ 𝒜_h^{π,θ}[φ] = 0`, where the
//!   total drift (including `rx − c`) is upwinded per candidate π, pure
//!   second derivatives are central and mixed derivatives use the
//!   sign-adapted seven-point stencil (the diagonal pair aligned with the
//!   sign of the covariance). θ is the closed-form maximiser for the
//!   central-difference gradient.
//! * `yⁱ = 0` faces: `ℬⁱ_h[φ] = qⁱ(φ − φ_{x−})/h_x − (1 + qⁱ)(φ_{yⁱ+} − φ)/h_{yⁱ} = 0`,
//!   i.e. both differences taken along the reflection direction `(−qⁱ, 1 + qⁱ)`.
//! * `y¹ = y² = 0` edge: `ℬ¹_h + ℬ²_h = 0` (one row for one unknown).
//! * `x = R`, `x = c/r`: Dirichlet 1 and 0, including the `y = 0` edges.
//! * `y = y_max`: one-sided `∂φ/∂yⁱ = 0`.
//!
//! Policy evaluation runs damped Jacobi sweeps, so every sweep is a pure map
//! over nodes and the iterates do not depend on the worker count.

use web_time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Policy;
use crate::grid::{DiscreteField, Grid, GridError, NodeKind};
use crate::linalg::{self, Vec2};
use crate::model::{self, Model, State};
use crate::params::{AmbiguitySet, ControlSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("solver config: {0}")]
    Config(String),
    #[error("control lattice is empty")]
    EmptyControlSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Stop when every row residual (interior and faces) is at most this.
    pub tol: f64,
    pub max_iterations: usize,
    /// Row-residual target of each policy evaluation.
    pub inner_tol: f64,
    pub max_sweeps: usize,
    /// Jacobi damping factor in (0, 1].
    pub relaxation: f64,
    /// Lattice points per axis, overriding a box control set's own count.
    pub pi_lattice: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iterations: 60,
            inner_tol: 1e-7,
            max_sweeps: 400_000,
            relaxation: 1.0,
            pi_lattice: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |s: &str| Err(SolveError::Config(s.to_string()));
        if !(self.tol > 0.0) {
            return bad("tol: must be positive");
        }
        if !(self.inner_tol > 0.0) {
            return bad("inner_tol: must be positive");
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation: must lie in (0, 1]");
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps: must be positive");
        }
        if let Some(n) = self.pi_lattice {
            if n < 2 {
                return bad("pi_lattice: needs at least 2 points per axis");
            }
        }
        Ok(())
    }
}

/// Sup and mean of absolute row residuals per boundary piece.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FaceStats {
    pub interior_sup: f64,
    pub b1_sup: f64,
    pub b1_mean: f64,
    pub b2_sup: f64,
    pub b2_mean: f64,
    /// `|ℬ¹_h + ℬ²_h|` on the `y¹ = y² = 0` edge.
    pub corner_sup: f64,
    /// `sup |φ − 1|` on `x = R`.
    pub ruin_sup: f64,
    /// `sup |φ|` on `x = c/r`.
    pub safe_sup: f64,
    pub far_sup: f64,
}

impl FaceStats {
    /// Largest residual over every row type.
    pub fn combined(&self) -> f64 {
        [
            self.interior_sup,
            self.b1_sup,
            self.b2_sup,
            self.corner_sup,
            self.ruin_sup,
            self.safe_sup,
            self.far_sup,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Residual of every node's own equation plus per-face statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub per_node: Vec<f64>,
    pub stats: FaceStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub residual_interior: f64,
    pub residual_b1: f64,
    pub residual_b2: f64,
    pub residual_corner: f64,
    pub residual_far: f64,
    /// Combined residual before each policy evaluation, and at the end.
    pub residual_history: Vec<f64>,
    pub policy_changes: Vec<usize>,
    pub sweeps: Vec<usize>,
    pub damping_engaged: bool,
    pub diag_dominance_ok: bool,
    pub lattice_size: usize,
    pub wall_seconds: f64,
}

impl SolveReport {
    pub fn stop_reason(&self) -> &'static str {
        if self.converged {
            "residual below tolerance"
        } else {
            "iteration budget exhausted"
        }
    }
}

/// Per-node optimal controls with trilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub grid: Grid,
    pub pi: Vec<Vec2>,
    pub theta: Vec<Vec2>,
    pub control_set: ControlSet,
    pub ambiguity_set: AmbiguitySet,
}

impl PolicyField {
    /// Interpolated controls at `z`, clamped into 𝒦 and projected onto ℒ.
    pub fn at(&self, z: &State) -> (Vec2, Vec2) {
        let mut pi = [0.0; 2];
        let mut th = [0.0; 2];
        for (n, w) in self.grid.stencil(z) {
            pi = linalg::add(pi, linalg::scale(self.pi[n], w));
            th = linalg::add(th, linalg::scale(self.theta[n], w));
        }
        (self.control_set.clamp(pi), self.ambiguity_set.project(th))
    }
}

impl Policy for PolicyField {
    fn controls(&self, z: &State) -> (Vec2, Vec2) {
        self.at(z)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: DiscreteField,
    pub policy: PolicyField,
    pub report: SolveReport,
}

const MAX_NB: usize = 12;

/// One linear row `diag φ_n − Σ w φ_nb = rhs`.
#[derive(Debug, Clone, Copy)]
struct Row {
    diag: f64,
    rhs: f64,
    len: u8,
    nb: [(u32, f64); MAX_NB],
}

impl Row {
    fn new(diag: f64, rhs: f64) -> Self {
        Row { diag, rhs, len: 0, nb: [(0, 0.0); MAX_NB] }
    }

    #[inline]
    fn push(&mut self, n: usize, w: f64) {
        if w != 0.0 {
            self.nb[self.len as usize] = (n as u32, w);
            self.len += 1;
        }
    }

    #[inline]
    fn residual(&self, n: usize, phi: &[f64]) -> f64 {
        self.diag * phi[n] - self.rhs - self.off_sum(phi)
    }

    #[inline]
    fn off_sum(&self, phi: &[f64]) -> f64 {
        self.nb[..self.len as usize].iter().map(|&(m, w)| w * phi[m as usize]).sum()
    }
}

/// Grid-dependent data of one control candidate.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    pi: Vec2,
    /// πᵀ(μ − r𝟙)
    excess: f64,
    /// σᵀπ: θ-loading of the wealth drift.
    fund_load: Vec2,
    /// −πⁱ(μⁱ − μᴮⁱ)
    bench_const: Vec2,
    /// −πⁱ (σᴮ_Δ)ⁱ: θ-loading of the distance drifts.
    bench_load: [Vec2; 2],
    /// a_kk/(2h_k²) − Σ_l |a_kl|/(2 h_k h_l)
    axis: [f64; 3],
    /// a_kl/(2 h_k h_l) for (x,y¹), (x,y²), (y¹,y²).
    cross: [f64; 3],
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Precomputed discretisation for one model and grid.
pub struct Discretization<'a> {
    model: &'a Model,
    grid: &'a Grid,
    candidates: Vec<Candidate>,
    h: [f64; 3],
    stride: [usize; 3],
}

impl<'a> Discretization<'a> {
    pub fn new(model: &'a Model, grid: &'a Grid, pi_lattice: Option<usize>) -> Result<Self, SolveError> {
        let set = match (&model.params.control_set, pi_lattice) {
            (ControlSet::Box { lo, hi, .. }, Some(n)) => {
                ControlSet::Box { lo: *lo, hi: *hi, points: [n, n] }
            }
            (set, _) => set.clone(),
        };
        let lattice = set.lattice();
        if lattice.is_empty() {
            return Err(SolveError::EmptyControlSet);
        }
        let h = [grid.hx, grid.hy[0], grid.hy[1]];
        let d = &model.derived;
        let candidates = lattice
            .into_iter()
            .map(|pi| {
                let a = model::diffusion_matrix(model, pi);
                let mut axis = [0.0; 3];
                for k in 0..3 {
                    axis[k] = a[k][k] / (2.0 * h[k] * h[k]);
                }
                let mut cross = [0.0; 3];
                for (c, &(k, l)) in PAIRS.iter().enumerate() {
                    let w = a[k][l] / (2.0 * h[k] * h[l]);
                    cross[c] = w;
                    axis[k] -= w.abs();
                    axis[l] -= w.abs();
                }
                let sb = &d.sigma_b_delta;
                Candidate {
                    pi,
                    excess: linalg::dot(pi, d.mu_r_delta),
                    fund_load: linalg::mat_t_vec(&model.params.sigma, pi),
                    bench_const: [-pi[0] * d.mu_b_delta[0], -pi[1] * d.mu_b_delta[1]],
                    bench_load: [
                        [-pi[0] * sb[0][0], -pi[0] * sb[0][1]],
                        [-pi[1] * sb[1][0], -pi[1] * sb[1][1]],
                    ],
                    axis,
                    cross,
                }
            })
            .collect();
        Ok(Discretization {
            model,
            grid,
            candidates,
            h,
            stride: [grid.stride_x(), grid.stride_y1(), 1],
        })
    }

    pub fn lattice_size(&self) -> usize {
        self.candidates.len()
    }

    /// True when no candidate produces a negative axis weight, i.e. the
    /// mixed-derivative stencil keeps the scheme monotone.
    pub fn diag_dominance_ok(&self) -> bool {
        self.candidates.iter().all(|c| {
            c.axis
                .iter()
                .zip(&self.h)
                .all(|(&w, &h)| w >= -1e-12 / (h * h))
        })
    }

    fn theta_for(&self, c: &Candidate, grad: [f64; 3]) -> Vec2 {
        let p = &self.model.params;
        if p.ambiguity_set.is_zero() {
            return [0.0, 0.0];
        }
        let g = [
            c.fund_load[0] * grad[0] + c.bench_load[0][0] * grad[1] + c.bench_load[1][0] * grad[2],
            c.fund_load[1] * grad[0] + c.bench_load[0][1] * grad[1] + c.bench_load[1][1] * grad[2],
        ];
        model::theta_star(&p.ambiguity_set, p.epsilon, g)
    }

    /// Total drift of (x, y¹, y²) at wealth `x` for candidate `c` and θ.
    #[inline]
    fn drift(&self, c: &Candidate, x: f64, theta: Vec2) -> [f64; 3] {
        let p = &self.model.params;
        [
            p.r * x - p.c + c.excess + linalg::dot(c.fund_load, theta),
            c.bench_const[0] + linalg::dot(c.bench_load[0], theta),
            c.bench_const[1] + linalg::dot(c.bench_load[1], theta),
        ]
    }

    /// Interior node: best candidate for the current field and its row.
    fn interior(&self, n: usize, phi: &[f64]) -> (Row, usize, Vec2, f64) {
        let p = &self.model.params;
        let x = self.grid.state(n).x;
        let v = phi[n];
        let s = self.stride;
        let h = self.h;
        let mut plus = [0.0; 3];
        let mut minus = [0.0; 3];
        let mut grad = [0.0; 3];
        for k in 0..3 {
            plus[k] = phi[n + s[k]] - v;
            minus[k] = phi[n - s[k]] - v;
            grad[k] = (plus[k] - minus[k]) / (2.0 * h[k]);
        }
        // diagonal differences per pair: (++ , −−) and (+−, −+)
        let mut same = [0.0; 3];
        let mut opposite = [0.0; 3];
        for (c, &(k, l)) in PAIRS.iter().enumerate() {
            same[c] = phi[n + s[k] + s[l]] - v + phi[n - s[k] - s[l]] - v;
            opposite[c] = phi[n + s[k] - s[l]] - v + phi[n - s[k] + s[l]] - v;
        }

        let inv2eps = 1.0 / (2.0 * p.epsilon);
        let mut best: Option<(f64, usize, Vec2, [f64; 3])> = None;
        for (idx, c) in self.candidates.iter().enumerate() {
            let theta = self.theta_for(c, grad);
            let b = self.drift(c, x, theta);
            let mut gen = -linalg::norm2(theta) * inv2eps;
            for k in 0..3 {
                gen += if b[k] > 0.0 { b[k] * plus[k] } else { -b[k] * minus[k] } / h[k];
                gen += c.axis[k] * (plus[k] + minus[k]);
            }
            for pc in 0..3 {
                let w = c.cross[pc];
                gen += if w >= 0.0 { w * same[pc] } else { -w * opposite[pc] };
            }
            let better = match best {
                None => true,
                Some((bg, ..)) => gen < bg - 1e-13 * (1.0 + bg.abs()),
            };
            if better {
                best = Some((gen, idx, theta, b));
            }
        }
        let (gen, idx, theta, b) = best.expect("non-empty lattice");
        let c = &self.candidates[idx];

        let mut row = Row::new(p.lambda_d, -linalg::norm2(theta) * inv2eps);
        let mut total = 0.0;
        for k in 0..3 {
            let up = if b[k] > 0.0 { b[k] / h[k] } else { 0.0 };
            let down = if b[k] < 0.0 { -b[k] / h[k] } else { 0.0 };
            let wp = c.axis[k] + up;
            let wm = c.axis[k] + down;
            row.push(n + s[k], wp);
            row.push(n - s[k], wm);
            total += wp + wm;
        }
        for (pc, &(k, l)) in PAIRS.iter().enumerate() {
            let w = c.cross[pc];
            if w > 0.0 {
                row.push(n + s[k] + s[l], w);
                row.push(n - s[k] - s[l], w);
                total += 2.0 * w;
            } else if w < 0.0 {
                row.push(n + s[k] - s[l], -w);
                row.push(n - s[k] + s[l], -w);
                total -= 2.0 * w;
            }
        }
        row.diag += total;
        let residual = p.lambda_d * v - gen;
        (row, idx, theta, residual)
    }

    /// Row of a policy-independent node.
    fn fixed_row(&self, n: usize, kind: NodeKind) -> Row {
        let q = self.model.params.q;
        let [sx, sy1, _] = self.stride;
        let [hx, hy1, hy2] = self.h;
        match kind {
            NodeKind::Ruin => Row::new(1.0, 1.0),
            NodeKind::Safe => Row::new(1.0, 0.0),
            NodeKind::Face1 => {
                let mut r = Row::new(q[0] / hx + (1.0 + q[0]) / hy1, 0.0);
                r.push(n - sx, q[0] / hx);
                r.push(n + sy1, (1.0 + q[0]) / hy1);
                r
            }
            NodeKind::Face2 => {
                let mut r = Row::new(q[1] / hx + (1.0 + q[1]) / hy2, 0.0);
                r.push(n - sx, q[1] / hx);
                r.push(n + 1, (1.0 + q[1]) / hy2);
                r
            }
            NodeKind::Corner => {
                let mut r = Row::new((q[0] + q[1]) / hx + (1.0 + q[0]) / hy1 + (1.0 + q[1]) / hy2, 0.0);
                r.push(n - sx, (q[0] + q[1]) / hx);
                r.push(n + sy1, (1.0 + q[0]) / hy1);
                r.push(n + 1, (1.0 + q[1]) / hy2);
                r
            }
            NodeKind::Far { y1, y2 } => {
                let mut r = Row::new(0.0, 0.0);
                if y1 {
                    r.diag += 1.0 / hy1;
                    r.push(n - sy1, 1.0 / hy1);
                }
                if y2 {
                    r.diag += 1.0 / hy2;
                    r.push(n - 1, 1.0 / hy2);
                }
                r
            }
            NodeKind::Interior => unreachable!("interior rows depend on the policy"),
        }
    }

    /// Policy improvement at `phi`: rows of the improved policy, the chosen
    /// candidate per node and the nonlinear residual of `phi`.
    fn improve(&self, phi: &[f64]) -> Improvement {
        let nodes: Vec<(Row, u32, Vec2, f64)> = (0..self.grid.len())
            .into_par_iter()
            .map(|n| match self.grid.kind(n) {
                NodeKind::Interior => {
                    let (row, idx, theta, res) = self.interior(n, phi);
                    (row, idx as u32, theta, res)
                }
                kind => {
                    let row = self.fixed_row(n, kind);
                    let res = row.residual(n, phi);
                    (row, u32::MAX, [0.0; 2], res)
                }
            })
            .collect();
        let mut rows = Vec::with_capacity(nodes.len());
        let mut choice = Vec::with_capacity(nodes.len());
        let mut theta = Vec::with_capacity(nodes.len());
        let mut residual = Vec::with_capacity(nodes.len());
        for (r, c, t, e) in nodes {
            rows.push(r);
            choice.push(c);
            theta.push(t);
            residual.push(e);
        }
        let stats = self.stats(&residual);
        Improvement { rows, choice, theta, residual, stats }
    }

    fn stats(&self, residual: &[f64]) -> FaceStats {
        let mut s = FaceStats::default();
        let (mut n1, mut n2) = (0usize, 0usize);
        for (n, &e) in residual.iter().enumerate() {
            let a = e.abs();
            match self.grid.kind(n) {
                NodeKind::Interior => s.interior_sup = s.interior_sup.max(a),
                NodeKind::Face1 => {
                    s.b1_sup = s.b1_sup.max(a);
                    s.b1_mean += a;
                    n1 += 1;
                }
                NodeKind::Face2 => {
                    s.b2_sup = s.b2_sup.max(a);
                    s.b2_mean += a;
                    n2 += 1;
                }
                NodeKind::Corner => s.corner_sup = s.corner_sup.max(a),
                NodeKind::Ruin => s.ruin_sup = s.ruin_sup.max(a),
                NodeKind::Safe => s.safe_sup = s.safe_sup.max(a),
                NodeKind::Far { .. } => s.far_sup = s.far_sup.max(a),
            }
        }
        s.b1_mean /= n1.max(1) as f64;
        s.b2_mean /= n2.max(1) as f64;
        s
    }

    /// Damped Jacobi sweeps on the frozen rows until the row residual is at
    /// most `tol`. Returns the number of sweeps.
    fn evaluate(&self, rows: &[Row], phi: &mut Vec<f64>, tol: f64, max_sweeps: usize, omega: f64) -> usize {
        let mut next = vec![0.0; phi.len()];
        for sweep in 0..max_sweeps {
            let cur: &[f64] = phi;
            let worst = next
                .par_iter_mut()
                .enumerate()
                .map(|(n, out)| {
                    let row = &rows[n];
                    let sum = row.rhs + row.off_sum(cur);
                    let res = row.diag * cur[n] - sum;
                    *out = cur[n] + omega * (sum / row.diag - cur[n]);
                    res.abs()
                })
                .reduce(|| 0.0, f64::max);
            if worst <= tol {
                return sweep;
            }
            std::mem::swap(phi, &mut next);
        }
        max_sweeps
    }

    fn policy_field(&self, imp: &Improvement) -> PolicyField {
        let g = self.grid;
        let p = &self.model.params;
        let mut pi = vec![[0.0; 2]; g.len()];
        let mut theta = vec![[0.0; 2]; g.len()];
        for n in 0..g.len() {
            let (i, j, k) = g.split(n);
            if i + 1 == g.nx {
                // liquidate at the safe level
                continue;
            }
            // boundary nodes take the controls of the nearest interior node
            let src = g.index(
                i.clamp(1, g.nx - 2),
                j.clamp(1, g.ny1 - 2),
                k.clamp(1, g.ny2 - 2),
            );
            let c = imp.choice[src];
            if c != u32::MAX {
                pi[n] = self.candidates[c as usize].pi;
                theta[n] = imp.theta[src];
            }
        }
        PolicyField {
            grid: g.clone(),
            pi,
            theta,
            control_set: p.control_set.clone(),
            ambiguity_set: p.ambiguity_set.clone(),
        }
    }
}

struct Improvement {
    rows: Vec<Row>,
    choice: Vec<u32>,
    theta: Vec<Vec2>,
    residual: Vec<f64>,
    stats: FaceStats,
}

/// Residual of every node's equation for `field`.
pub fn assemble_residual(field: &DiscreteField, m: &Model, grid: &Grid) -> Result<Residuals, SolveError> {
    assemble_residual_with(field, m, grid, None)
}

pub fn assemble_residual_with(
    field: &DiscreteField,
    m: &Model,
    grid: &Grid,
    pi_lattice: Option<usize>,
) -> Result<Residuals, SolveError> {
    field.check(grid)?;
    let disc = Discretization::new(m, grid, pi_lattice)?;
    let imp = disc.improve(&field.values);
    Ok(Residuals { per_node: imp.residual, stats: imp.stats })
}

/// Face statistics of a field (the boundary part of [`assemble_residual`]).
pub fn boundary_residuals(field: &DiscreteField, m: &Model, grid: &Grid) -> Result<FaceStats, SolveError> {
    Ok(assemble_residual(field, m, grid)?.stats)
}

/// Optimal controls recomputed from a field.
pub fn extract_policy(field: &DiscreteField, m: &Model, grid: &Grid) -> Result<PolicyField, SolveError> {
    extract_policy_with(field, m, grid, None)
}

pub fn extract_policy_with(
    field: &DiscreteField,
    m: &Model,
    grid: &Grid,
    pi_lattice: Option<usize>,
) -> Result<PolicyField, SolveError> {
    field.check(grid)?;
    let disc = Discretization::new(m, grid, pi_lattice)?;
    let imp = disc.improve(&field.values);
    Ok(disc.policy_field(&imp))
}

/// Initial iterate: the no-investment ruin probability, constant in y.
fn initial_field(m: &Model, grid: &Grid) -> DiscreteField {
    DiscreteField::from_fn(grid, |z| model::no_invest_value(m, z.x).unwrap_or(0.0))
}

/// Howard policy iteration from the no-investment value.
pub fn howard_solve(m: &Model, grid: &Grid, cfg: &SolverConfig) -> Result<Solution, SolveError> {
    howard_solve_from(m, grid, cfg, initial_field(m, grid))
}

/// Howard policy iteration from a given starting field.
pub fn howard_solve_from(
    m: &Model,
    grid: &Grid,
    cfg: &SolverConfig,
    start: DiscreteField,
) -> Result<Solution, SolveError> {
    cfg.validate()?;
    start.check(grid)?;
    let clock = Instant::now();
    let disc = Discretization::new(m, grid, cfg.pi_lattice)?;
    let mut phi = start.values;
    let mut prev_phi: Option<Vec<f64>> = None;
    let mut history = Vec::new();
    let mut changes = Vec::new();
    let mut sweeps = Vec::new();
    let mut damping = false;
    let mut prev_choice: Option<Vec<u32>> = None;
    let mut iterations = 0;

    let final_imp = loop {
        let imp = disc.improve(&phi);
        let res = imp.stats.combined();
        let changed = match &prev_choice {
            Some(pc) => pc.iter().zip(&imp.choice).filter(|(a, b)| a != b).count(),
            None => imp.choice.iter().filter(|&&c| c != u32::MAX).count(),
        };
        changes.push(changed);
        let rose = history.last().is_some_and(|&last: &f64| res > last + cfg.inner_tol);
        history.push(res);
        if res <= cfg.tol || iterations >= cfg.max_iterations {
            break imp;
        }
        if rose {
            if let Some(prev) = &prev_phi {
                // step back halfway towards the previous iterate and re-improve
                damping = true;
                for (v, p) in phi.iter_mut().zip(prev) {
                    *v = 0.5 * (*v + p);
                }
                iterations += 1;
                prev_choice = Some(imp.choice);
                continue;
            }
        }
        prev_phi = Some(phi.clone());
        let used = disc.evaluate(&imp.rows, &mut phi, cfg.inner_tol, cfg.max_sweeps, cfg.relaxation);
        sweeps.push(used);
        prev_choice = Some(imp.choice);
        iterations += 1;
    };

    let stats = final_imp.stats;
    let report = SolveReport {
        iterations,
        converged: stats.combined() <= cfg.tol,
        residual_interior: stats.interior_sup,
        residual_b1: stats.b1_sup,
        residual_b2: stats.b2_sup,
        residual_corner: stats.corner_sup,
        residual_far: stats.far_sup,
        residual_history: history,
        policy_changes: changes,
        sweeps,
        damping_engaged: damping,
        diag_dominance_ok: disc.diag_dominance_ok(),
        lattice_size: disc.lattice_size(),
        wall_seconds: clock.elapsed().as_secs_f64(),
    };
    let policy = disc.policy_field(&final_imp);
    Ok(Solution { field: DiscreteField { values: phi }, policy, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::params::MarketParams;

    fn no_invest_model() -> Model {
        let mut p = MarketParams::reference();
        p.control_set = ControlSet::zero();
        Model::new(p).unwrap()
    }

    #[test]
    fn zero_field_dirichlet_residuals() {
        let m = no_invest_model();
        let g = build_grid(&m, 9, 4, 4, [1.0, 1.0]).unwrap();
        let zero = DiscreteField { values: vec![0.0; g.len()] };
        let r = assemble_residual(&zero, &m, &g).unwrap();
        for n in 0..g.len() {
            match g.kind(n) {
                NodeKind::Ruin => assert_eq!(r.per_node[n], -1.0),
                NodeKind::Safe => assert_eq!(r.per_node[n], 0.0),
                _ => {}
            }
        }
    }

    #[test]
    fn y_independent_field_face_residual_is_fee_times_backward_difference() {
        let mut p = MarketParams::reference();
        p.q = [0.2, 0.35];
        let m = Model::new(p).unwrap();
        let g = build_grid(&m, 11, 5, 5, [2.0, 2.0]).unwrap();
        let f = |x: f64| (x / 50.0).cos();
        let field = DiscreteField::from_fn(&g, |z| f(z.x));
        let r = assemble_residual(&field, &m, &g).unwrap();
        for n in 0..g.len() {
            let (i, ..) = g.split(n);
            let dx = (f(g.x(i)) - f(g.x(i.saturating_sub(1)))) / g.hx;
            match g.kind(n) {
                NodeKind::Face1 => assert!((r.per_node[n] - 0.2 * dx).abs() < 1e-12),
                NodeKind::Face2 => assert!((r.per_node[n] - 0.35 * dx).abs() < 1e-12),
                NodeKind::Corner => assert!((r.per_node[n] - 0.55 * dx).abs() < 1e-12),
                _ => {}
            }
        }
    }

    #[test]
    fn config_validation() {
        let cfg = SolverConfig { tol: 0.0, ..SolverConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig { relaxation: 1.5, ..SolverConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(SolverConfig::default().validate().is_ok());
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let m = no_invest_model();
        let g = build_grid(&m, 5, 3, 3, [1.0, 1.0]).unwrap();
        let f = DiscreteField { values: vec![0.0; 3] };
        assert!(matches!(assemble_residual(&f, &m, &g), Err(SolveError::Grid(_))));
    }

    #[test]
    fn singleton_control_set_solves_to_singleton_policy() {
        let m = no_invest_model();
        let g = build_grid(&m, 21, 3, 3, [1.0, 1.0]).unwrap();
        let sol = howard_solve(&m, &g, &SolverConfig::default()).unwrap();
        assert!(sol.report.converged, "{:?}", sol.report);
        assert!(sol.policy.pi.iter().all(|p| *p == [0.0, 0.0]));
        assert!(sol.policy.theta.iter().all(|t| *t == [0.0, 0.0]));
    }
}

//! Euler–Maruyama simulation of the controlled state `(X, Y¹, Y², M¹, M²)`.
//!
//! Paths are simulated directly under the distorted measure: the adversary's
//! θ enters as a drift shift `σθ` (funds) and `σᴮ_Δθ` (distances), and the
//! entropy cost is accrued pathwise as `‖θ‖²dt/(2ε)`.
//!
//! Each step reflects the distances at zero with the per-fund pushing
//! direction `(−qⁱ, 1 + qⁱ)` in `(x, yⁱ)`: an overshoot `Ỹⁱ < 0` raises the
//! net watermark by `dMⁱ = −Ỹⁱ/(1 + qⁱ)`, sets `Yⁱ = 0` and charges the fee
//! `qⁱ dMⁱ` to wealth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Vec2};
use crate::model::{Model, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dt: must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("t_max: must be positive and at least dt, got {0}")]
    BadHorizon(f64),
    #[error("n_paths: must be positive")]
    ZeroPaths,
    #[error("initial state {0:?} outside [R, c/r] x [0, inf)^2")]
    InitialState(State),
    #[error("step requested on a terminated path")]
    NotAlive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "time", rename_all = "snake_case")]
pub enum PathStatus {
    Alive,
    Ruined(f64),
    Defaulted(f64),
    Truncated(f64),
}

impl PathStatus {
    pub fn label(&self) -> &'static str {
        match self {
            PathStatus::Alive => "alive",
            PathStatus::Ruined(_) => "ruined",
            PathStatus::Defaulted(_) => "defaulted",
            PathStatus::Truncated(_) => "truncated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub t: f64,
    pub x: f64,
    pub y: Vec2,
    /// Net watermarks `Mⁱ`.
    pub m: Vec2,
    /// Raw (pre-fee) watermarks `M̄ⁱ`.
    pub m_raw: Vec2,
    /// Accrued `(1/2ε)∫‖θ‖²ds`.
    pub penalty: f64,
    pub status: PathStatus,
}

impl PathState {
    /// Fresh path at `z`; both watermarks start at the initial distances.
    pub fn start(z: State) -> Self {
        PathState {
            t: 0.0,
            x: z.x,
            y: z.y(),
            m: z.y(),
            m_raw: z.y(),
            penalty: 0.0,
            status: PathStatus::Alive,
        }
    }

    pub fn state(&self) -> State {
        State::new(self.x, self.y[0], self.y[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub store_trajectories: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::BadStep(self.dt));
        }
        if !(self.t_max >= self.dt && self.t_max.is_finite()) {
            return Err(SimError::BadHorizon(self.t_max));
        }
        if self.n_paths == 0 {
            return Err(SimError::ZeroPaths);
        }
        Ok(())
    }

    /// Horizon with `exp(−λ t_max) = budget`.
    pub fn horizon_for_budget(lambda_d: f64, budget: f64) -> f64 {
        -budget.ln() / lambda_d
    }
}

/// A feedback strategy for both players.
pub trait Policy: Sync {
    /// Position π and drift distortion θ at state `z`.
    fn controls(&self, z: &State) -> (Vec2, Vec2);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy {
    pub pi: Vec2,
    pub theta: Vec2,
}

impl ConstantPolicy {
    pub fn idle() -> Self {
        ConstantPolicy { pi: [0.0; 2], theta: [0.0; 2] }
    }
}

impl Policy for ConstantPolicy {
    fn controls(&self, _z: &State) -> (Vec2, Vec2) {
        (self.pi, self.theta)
    }
}

/// Default time with intensity `lambda_d`, by inversion of an Exp(1) draw.
pub fn sample_default<R: Rng + ?Sized>(rng: &mut R, lambda_d: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / lambda_d
}

/// One Euler–Maruyama step of length `dt` with Brownian increment `dw`.
///
/// The returned state is flagged ruined when `X ≤ R` at the end of the step.
pub fn euler_step(
    s: &PathState,
    pi: Vec2,
    theta: Vec2,
    dt: f64,
    dw: Vec2,
    m: &Model,
) -> Result<PathState, SimError> {
    if s.status != PathStatus::Alive {
        return Err(SimError::NotAlive);
    }
    if !(pi.iter().chain(&theta).chain(&dw).all(|v| v.is_finite()) && dt.is_finite()) {
        return Err(SimError::NonFinite("step inputs"));
    }
    if !(s.x.is_finite() && s.y.iter().all(|v| v.is_finite())) {
        return Err(SimError::NonFinite("path state"));
    }
    let p = &m.params;
    let d = &m.derived;

    let fund_drift = linalg::add(d.mu_r_delta, linalg::mat_vec(&p.sigma, theta));
    let fund_noise = linalg::mat_vec(&p.sigma, dw);
    let x_tilde = s.x
        + (p.r * s.x - p.c + linalg::dot(pi, fund_drift)) * dt
        + linalg::dot(pi, fund_noise);

    let bench_drift = linalg::add(d.mu_b_delta, linalg::mat_vec(&d.sigma_b_delta, theta));
    let bench_noise = linalg::mat_vec(&d.sigma_b_delta, dw);

    let mut next = *s;
    let mut fees = 0.0;
    for i in 0..2 {
        let y_tilde = s.y[i] - pi[i] * (bench_drift[i] * dt + bench_noise[i]);
        let push = (-y_tilde).max(0.0);
        let dm = push / (1.0 + p.q[i]);
        next.y[i] = if push > 0.0 { 0.0 } else { y_tilde };
        next.m[i] += dm;
        next.m_raw[i] += push;
        fees += p.q[i] * dm;
    }
    next.x = x_tilde - fees;
    next.t = s.t + dt;
    next.penalty = s.penalty + linalg::norm2(theta) * dt / (2.0 * p.epsilon);
    if next.x <= p.ruin_level {
        next.status = PathStatus::Ruined(next.t);
    }
    Ok(next)
}

/// Row of a stored trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: Vec2,
    pub m: Vec2,
    pub m_raw: Vec2,
    pub penalty: f64,
    pub status: PathStatus,
}

impl From<&PathState> for TrajectoryPoint {
    fn from(s: &PathState) -> Self {
        TrajectoryPoint {
            t: s.t,
            x: s.x,
            y: s.y,
            m: s.m,
            m_raw: s.m_raw,
            penalty: s.penalty,
            status: s.status,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome {
    pub terminal: PathState,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

impl PathOutcome {
    /// Pathwise objective `1{τ_R < τ_D} − (1/2ε)∫‖θ‖²ds`.
    pub fn objective(&self) -> f64 {
        let hit = matches!(self.terminal.status, PathStatus::Ruined(_)) as u8 as f64;
        hit - self.terminal.penalty
    }
}

pub fn check_initial(m: &Model, z: &State) -> Result<(), SimError> {
    let p = &m.params;
    let ok = z.x >= p.ruin_level && z.x <= p.safe_level() && z.y1 >= 0.0 && z.y2 >= 0.0;
    if ok {
        Ok(())
    } else {
        Err(SimError::InitialState(*z))
    }
}

/// The per-path random stream: one master seed, stream index = path index.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Run one path from `z0` until ruin, default or the horizon.
pub fn simulate_path<P: Policy + ?Sized, R: Rng + ?Sized>(
    m: &Model,
    policy: &P,
    z0: State,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PathOutcome, SimError> {
    cfg.validate()?;
    check_initial(m, &z0)?;
    let p = &m.params;
    let tau_d = sample_default(rng, p.lambda_d);
    let mut s = PathState::start(z0);
    let mut traj = cfg.store_trajectories.then(|| vec![TrajectoryPoint::from(&s)]);

    if s.x <= p.ruin_level {
        s.status = PathStatus::Ruined(0.0);
        if let Some(t) = traj.as_mut() {
            t[0].status = s.status;
        }
        return Ok(PathOutcome { terminal: s, trajectory: traj });
    }

    let sqrt_dt = cfg.dt.sqrt();
    loop {
        let end = tau_d.min(cfg.t_max);
        if s.t >= end {
            s.status = if tau_d <= cfg.t_max {
                PathStatus::Defaulted(tau_d)
            } else {
                PathStatus::Truncated(cfg.t_max)
            };
            break;
        }
        let h = cfg.dt.min(end - s.t);
        let scale = if h == cfg.dt { sqrt_dt } else { h.sqrt() };
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let (pi, theta) = policy.controls(&s.state());
        let pi = p.control_set.clamp(pi);
        let theta = p.ambiguity_set.project(theta);
        s = euler_step(&s, pi, theta, h, [z1 * scale, z2 * scale], m)?;
        if h < cfg.dt || (end - s.t) < 1e-12 * cfg.dt {
            // land exactly on the stopping time
            s.t = end;
        }
        if let Some(t) = traj.as_mut() {
            t.push(TrajectoryPoint::from(&s));
        }
        if let PathStatus::Ruined(_) = s.status {
            break;
        }
    }
    if let Some(t) = traj.as_mut() {
        if let Some(last) = t.last_mut() {
            last.status = s.status;
        }
    }
    Ok(PathOutcome { terminal: s, trajectory: traj })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub truncation_fraction: f64,
    /// Monte-Carlo mean of the accrued entropy penalty alone.
    pub penalty_mean: f64,
    pub ruin_fraction: f64,
}

/// Pairwise (cascade) summation; the result depends only on the slice order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Monte-Carlo estimate of `ℚ(τ_R < τ_D) − (1/ε)H_{τ_D}(ℚ|ℙ)` from `z0`.
///
/// Path `k` always uses stream `k` of the master seed and the reduction is a
/// fixed-shape pairwise sum, so the result is bit-identical for any number of
/// worker threads.
pub fn estimate_objective<P: Policy + ?Sized>(
    m: &Model,
    policy: &P,
    z0: State,
    cfg: &SimConfig,
) -> Result<ObjectiveEstimate, SimError> {
    let (est, _) = run_paths(m, policy, z0, cfg, false)?;
    Ok(est)
}

/// As [`estimate_objective`], also returning stored trajectories when
/// `keep_trajectories` and the config asks for them.
pub fn run_paths<P: Policy + ?Sized>(
    m: &Model,
    policy: &P,
    z0: State,
    cfg: &SimConfig,
    keep_trajectories: bool,
) -> Result<(ObjectiveEstimate, Vec<PathOutcome>), SimError> {
    cfg.validate()?;
    check_initial(m, &z0)?;
    let mut local = cfg.clone();
    local.store_trajectories = cfg.store_trajectories && keep_trajectories;
    let outcomes: Result<Vec<PathOutcome>, SimError> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(cfg.seed, k);
            simulate_path(m, policy, z0, &local, &mut rng)
        })
        .collect();
    let outcomes = outcomes?;
    let n = outcomes.len();
    let values: Vec<f64> = outcomes.iter().map(PathOutcome::objective).collect();
    let mean = pairwise_sum(&values) / n as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if n > 1 { pairwise_sum(&sq) / (n - 1) as f64 } else { 0.0 };
    let penalties: Vec<f64> = outcomes.iter().map(|o| o.terminal.penalty).collect();
    let ruined: Vec<f64> = outcomes
        .iter()
        .map(|o| matches!(o.terminal.status, PathStatus::Ruined(_)) as u8 as f64)
        .collect();
    let truncated = outcomes
        .iter()
        .filter(|o| matches!(o.terminal.status, PathStatus::Truncated(_)))
        .count();
    let est = ObjectiveEstimate {
        mean,
        stderr: (var / n as f64).sqrt(),
        n,
        truncation_fraction: truncated as f64 / n as f64,
        penalty_mean: pairwise_sum(&penalties) / n as f64,
        ruin_fraction: pairwise_sum(&ruined) / n as f64,
    };
    let kept = if local.store_trajectories { outcomes } else { Vec::new() };
    Ok((est, kept))
}

/// Per-fund maximum residual of `M̄ⁱ − yⁱ₀ = (1 + qⁱ)(Mⁱ − yⁱ₀)` along a path.
pub fn watermark_report(trajectory: &[TrajectoryPoint], q: Vec2) -> Vec2 {
    let Some(first) = trajectory.first() else {
        return [0.0, 0.0];
    };
    let y0 = first.m;
    let mut worst = [0.0f64; 2];
    for pt in trajectory {
        for i in 0..2 {
            let lhs = pt.m_raw[i] - y0[i];
            let rhs = (1.0 + q[i]) * (pt.m[i] - y0[i]);
            worst[i] = worst[i].max((lhs - rhs).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::MarketParams;

    fn model() -> Model {
        Model::new(MarketParams::reference()).unwrap()
    }

    #[test]
    fn idle_step_is_deterministic_transport() {
        let m = model();
        let s = PathState::start(State::new(30.0, 1.0, 2.0));
        let next = euler_step(&s, [0.0; 2], [0.3, 0.1], 0.01, [0.5, -0.7], &m).unwrap();
        assert_eq!(next.x, 30.0 + (0.02 * 30.0 - 1.0) * 0.01);
        assert_eq!(next.y, [1.0, 2.0]);
        assert_eq!(next.m, [1.0, 2.0]);
    }

    #[test]
    fn one_step_reflection_by_hand() {
        // With σᴮ = σ the distance moves by −π(μ − μᴮ)dt only.
        let mut p = MarketParams::reference();
        p.q = [0.2, 0.0];
        p.mu_b = [p.mu[0] - 1.2, p.mu[1]];
        let m = Model::new(p).unwrap();
        let s = PathState::start(State::new(30.0, 0.0, 0.5));
        // Ỹ¹ = 0 − 1 * 1.2 * 0.1 = −0.12
        let next = euler_step(&s, [1.0, 0.0], [0.0; 2], 0.1, [0.0; 2], &m).unwrap();
        assert!((next.m[0] - 0.1).abs() < 1e-15);
        assert!((next.m_raw[0] - 0.12).abs() < 1e-15);
        assert_eq!(next.y[0], 0.0);
        let frictionless = 30.0 + (0.02 * 30.0 - 1.0 + 0.05) * 0.1;
        assert!((next.x - (frictionless - 0.02)).abs() < 1e-12);
    }

    #[test]
    fn start_at_ruin_level_is_immediate_ruin() {
        let m = model();
        let cfg = SimConfig { dt: 0.01, t_max: 100.0, n_paths: 1, seed: 1, store_trajectories: false };
        let out =
            simulate_path(&m, &ConstantPolicy::idle(), State::new(10.0, 0.0, 0.0), &cfg, &mut path_rng(1, 0))
                .unwrap();
        assert_eq!(out.terminal.status, PathStatus::Ruined(0.0));
        assert_eq!(out.objective(), 1.0);
    }

    #[test]
    fn start_at_safe_level_never_ruins() {
        let m = model();
        let cfg = SimConfig { dt: 0.05, t_max: 200.0, n_paths: 200, seed: 5, store_trajectories: false };
        let est = estimate_objective(&m, &ConstantPolicy::idle(), State::new(50.0, 0.0, 0.0), &cfg).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.ruin_fraction, 0.0);
    }

    #[test]
    fn config_errors() {
        let m = model();
        let z = State::new(30.0, 0.0, 0.0);
        let bad = SimConfig { dt: 0.0, t_max: 1.0, n_paths: 1, seed: 0, store_trajectories: false };
        assert_eq!(estimate_objective(&m, &ConstantPolicy::idle(), z, &bad).unwrap_err(), SimError::BadStep(0.0));
        let bad = SimConfig { dt: 0.1, t_max: 1.0, n_paths: 0, seed: 0, store_trajectories: false };
        assert_eq!(estimate_objective(&m, &ConstantPolicy::idle(), z, &bad).unwrap_err(), SimError::ZeroPaths);
        let ok = SimConfig { dt: 0.1, t_max: 1.0, n_paths: 1, seed: 0, store_trajectories: false };
        assert!(matches!(
            estimate_objective(&m, &ConstantPolicy::idle(), State::new(5.0, 0.0, 0.0), &ok),
            Err(SimError::InitialState(_))
        ));
    }

    #[test]
    fn non_finite_step_rejected() {
        let m = model();
        let s = PathState::start(State::new(30.0, 0.0, 0.0));
        assert!(euler_step(&s, [f64::NAN, 0.0], [0.0; 2], 0.01, [0.0; 2], &m).is_err());
    }

    #[test]
    fn watermark_identity_without_reflection_is_exact() {
        let pts = vec![TrajectoryPoint {
            t: 0.0,
            x: 30.0,
            y: [1.0, 1.0],
            m: [1.0, 1.0],
            m_raw: [1.0, 1.0],
            penalty: 0.0,
            status: PathStatus::Alive,
        }; 3];
        assert_eq!(watermark_report(&pts, [0.2, 0.3]), [0.0, 0.0]);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }
}

//! Closed-form benchmarks and the pointwise Hamiltonian algebra.
//!
//! The state is `z = (x, y¹, y²)`: wealth and the two distances to the funds'
//! high-watermarks. For a smooth test function φ with jet `(φ, ∇φ, ∇²φ)`
//! the controlled generator under position π and drift distortion θ is
//!
//! ```text
//! 𝒜^{π,θ}[φ] = −‖θ‖²/(2ε) + b[π,θ]ᵀ∇φ + ½ Tr(Σ[π] ∇²φ)
//! ℱ[φ]       = λφ − (rx − c)φ_x − inf_{π∈𝒦} sup_{θ∈ℒ} 𝒜^{π,θ}[φ]
//! ℬⁱ[φ]      = qⁱφ_x − (1 + qⁱ)φ_{yⁱ}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Vec2};
use crate::params::{AmbiguitySet, DerivedParams, MarketParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("wealth {x} is below the ruin level {ruin_level}")]
    BelowRuin { x: f64, ruin_level: f64 },
    #[error("wealth {x} is outside [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("exponent kappa = {0} must exceed 1")]
    KappaTooSmall(f64),
    #[error("control set is empty")]
    EmptyControlSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y1: f64,
    pub y2: f64,
}

impl State {
    pub fn new(x: f64, y1: f64, y2: f64) -> Self {
        State { x, y1, y2 }
    }

    pub fn y(&self) -> Vec2 {
        [self.y1, self.y2]
    }
}

/// Value, gradient and Hessian of a test function at a point, ordered (x, y¹, y²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

impl Jet {
    /// Jet of a function of wealth only.
    pub fn of_wealth(value: f64, dx: f64, dxx: f64) -> Self {
        let mut hess = [[0.0; 3]; 3];
        hess[0][0] = dxx;
        Jet { value, grad: [dx, 0.0, 0.0], hess }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (self.hess[i][j] - self.hess[j][i]).abs() <= tol))
    }
}

/// Convenience bundle of the raw and derived parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: MarketParams,
    pub derived: DerivedParams,
}

impl Model {
    pub fn new(params: MarketParams) -> Result<Self, crate::params::ParamError> {
        let derived = params.validate()?;
        Ok(Model { params, derived })
    }
}

/// The larger root of `r κ² − (r + λ + Σ) κ + λ = 0`; the exponent of the
/// frictionless minimal ruin probability.
pub fn kappa(m: &Model) -> f64 {
    m.derived.kappa
}

fn wealth_ratio(p: &MarketParams, x: f64) -> f64 {
    (p.c - p.r * x) / (p.c - p.r * p.ruin_level)
}

/// Minimal ruin probability without fees or ambiguity, `((c − rx)/(c − rR))^κ`.
pub fn frictionless_value(m: &Model, x: f64) -> Result<f64, ModelError> {
    let p = &m.params;
    if x < p.ruin_level {
        return Err(ModelError::BelowRuin { x, ruin_level: p.ruin_level });
    }
    if x >= p.safe_level() {
        return Ok(0.0);
    }
    Ok(wealth_ratio(p, x).powf(m.derived.kappa))
}

/// First and second derivative of the frictionless value at `x`.
pub fn frictionless_derivatives(m: &Model, x: f64) -> (f64, f64) {
    let p = &m.params;
    let k = m.derived.kappa;
    let scale = p.c - p.r * p.ruin_level;
    let u = ((p.c - p.r * x) / scale).max(0.0);
    let d1 = -p.r * k / scale * u.powf(k - 1.0);
    let d2 = p.r * p.r * k * (k - 1.0) / (scale * scale) * u.powf(k - 2.0);
    (d1, d2)
}

/// Optimal frictionless position `(σσᵀ)⁻¹μ_Δ (c − rx) / (r(κ − 1))`.
pub fn frictionless_policy(m: &Model, x: f64) -> Result<Vec2, ModelError> {
    let p = &m.params;
    let k = m.derived.kappa;
    if k <= 1.0 {
        return Err(ModelError::KappaTooSmall(k));
    }
    if x < p.ruin_level || x > p.safe_level() {
        return Err(ModelError::OutOfRange { x, lo: p.ruin_level, hi: p.safe_level() });
    }
    let factor = (p.c - p.r * x) / (p.r * (k - 1.0));
    Ok(linalg::scale(m.derived.merton_direction, factor))
}

/// Ruin probability when nothing is invested, `((c − rx)/(c − rR))^{λ/r}`.
pub fn no_invest_value(m: &Model, x: f64) -> Result<f64, ModelError> {
    let p = &m.params;
    if x < p.ruin_level || x > p.safe_level() {
        return Err(ModelError::OutOfRange { x, lo: p.ruin_level, hi: p.safe_level() });
    }
    Ok(wealth_ratio(p, x).max(0.0).powf(p.lambda_d / p.r))
}

pub fn no_invest_derivatives(m: &Model, x: f64) -> (f64, f64) {
    let p = &m.params;
    let k = p.lambda_d / p.r;
    let scale = p.c - p.r * p.ruin_level;
    let u = ((p.c - p.r * x) / scale).max(0.0);
    let d1 = -p.r * k / scale * u.powf(k - 1.0);
    let d2 = p.r * p.r * k * (k - 1.0) / (scale * scale) * u.powf(k - 2.0);
    (d1, d2)
}

/// Controlled drift `b[π, θ]` of `(x, y¹, y²)`, excluding the `rx − c` term.
pub fn drift_b(m: &Model, pi: Vec2, theta: Vec2) -> [f64; 3] {
    let p = &m.params;
    let d = &m.derived;
    let fund = linalg::add(d.mu_r_delta, linalg::mat_vec(&p.sigma, theta));
    let bench = linalg::add(d.mu_b_delta, linalg::mat_vec(&d.sigma_b_delta, theta));
    [linalg::dot(pi, fund), -pi[0] * bench[0], -pi[1] * bench[1]]
}

/// Rows of the 3×2 noise loading `G[π]` with `Σ[π] = G Gᵀ`.
pub fn noise_loading(m: &Model, pi: Vec2) -> [[f64; 2]; 3] {
    let p = &m.params;
    let sb = &m.derived.sigma_b_delta;
    [
        linalg::mat_t_vec(&p.sigma, pi),
        [-pi[0] * sb[0][0], -pi[0] * sb[0][1]],
        [-pi[1] * sb[1][0], -pi[1] * sb[1][1]],
    ]
}

/// Diffusion matrix `Σ[π] = G Gᵀ`.
pub fn diffusion_matrix(m: &Model, pi: Vec2) -> [[f64; 3]; 3] {
    let g = noise_loading(m, pi);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = linalg::dot(g[i], g[j]);
        }
    }
    out
}

/// Coefficient of θ in `b[π, θ]ᵀ∇φ`: `σᵀπ φ_x − (σᴮ_Δ)ᵀ diag(π) ∇_yφ`.
pub fn theta_coefficient(m: &Model, pi: Vec2, grad: [f64; 3]) -> Vec2 {
    let sb = &m.derived.sigma_b_delta;
    let fund = linalg::mat_t_vec(&m.params.sigma, pi);
    let wy = [pi[0] * grad[1], pi[1] * grad[2]];
    let bench = linalg::mat_t_vec(sb, wy);
    [fund[0] * grad[0] - bench[0], fund[1] * grad[0] - bench[1]]
}

/// Maximiser of `−‖θ‖²/(2ε) + θᵀg` over ℒ.
///
/// The objective equals `−‖θ − εg‖²/(2ε) + ε‖g‖²/2`, so the maximiser is the
/// projection of `εg` onto ℒ (a clamp for boxes, radial shrink for balls).
#[inline]
pub fn theta_star(set: &AmbiguitySet, epsilon: f64, g: Vec2) -> Vec2 {
    set.project(linalg::scale(g, epsilon))
}

/// The value of `−‖θ‖²/(2ε) + θᵀg`.
#[inline]
pub fn theta_part(epsilon: f64, theta: Vec2, g: Vec2) -> f64 {
    -linalg::norm2(theta) / (2.0 * epsilon) + linalg::dot(theta, g)
}

/// `𝒜^{π,θ}[φ]` at the given jet.
pub fn generator(m: &Model, pi: Vec2, theta: Vec2, jet: &Jet) -> f64 {
    let b = drift_b(m, pi, theta);
    let s = diffusion_matrix(m, pi);
    let mut tr = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            tr += s[i][j] * jet.hess[j][i];
        }
    }
    -linalg::norm2(theta) / (2.0 * m.params.epsilon)
        + b[0] * jet.grad[0]
        + b[1] * jet.grad[1]
        + b[2] * jet.grad[2]
        + 0.5 * tr
}

/// `sup_{θ∈ℒ} 𝒜^{π,θ}[φ]` and its maximiser.
pub fn inner_sup_theta(m: &Model, pi: Vec2, jet: &Jet) -> (Vec2, f64) {
    let g = theta_coefficient(m, pi, jet.grad);
    let theta = theta_star(&m.params.ambiguity_set, m.params.epsilon, g);
    (theta, generator(m, pi, theta, jet))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue {
    pub f_value: f64,
    pub pi_star: Vec2,
    pub theta_star: Vec2,
}

/// `ℱ[φ](z)` with the infimum taken over the control lattice.
///
/// Ties are resolved towards the smallest-norm position, then lexicographically.
pub fn hamiltonian(m: &Model, z: &State, jet: &Jet) -> Result<HamiltonianValue, ModelError> {
    let lattice = m.params.control_set.lattice();
    hamiltonian_over(m, &lattice, z, jet)
}

/// As [`hamiltonian`] but over a pre-enumerated lattice (sorted by norm).
pub fn hamiltonian_over(
    m: &Model,
    lattice: &[Vec2],
    z: &State,
    jet: &Jet,
) -> Result<HamiltonianValue, ModelError> {
    let mut best: Option<(f64, Vec2, Vec2)> = None;
    for &pi in lattice {
        let (theta, v) = inner_sup_theta(m, pi, jet);
        let better = match best {
            None => true,
            Some((bv, _, _)) => v < bv - 1e-14 * (1.0 + bv.abs()),
        };
        if better {
            best = Some((v, pi, theta));
        }
    }
    let (inf, pi_star, theta_star) = best.ok_or(ModelError::EmptyControlSet)?;
    let p = &m.params;
    let f_value = p.lambda_d * jet.value - (p.r * z.x - p.c) * jet.grad[0] - inf;
    Ok(HamiltonianValue { f_value, pi_star, theta_star })
}

/// Oblique operator `ℬⁱ[φ] = qⁱφ_x − (1 + qⁱ)φ_{yⁱ}` for fund `i ∈ {1, 2}`.
pub fn oblique_b(m: &Model, i: usize, jet: &Jet) -> f64 {
    assert!(i == 1 || i == 2, "fund index must be 1 or 2");
    let q = m.params.q[i - 1];
    q * jet.grad[0] - (1.0 + q) * jet.grad[i]
}

//! Market parameters, admissible control/ambiguity sets and validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat2, Vec2};

/// Smallest |det σ| accepted as invertible.
pub const SIGMA_DET_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("sigma: volatility matrix is singular (|det| = {0:e})")]
    SingularSigma(f64),
    #[error("R: ruin level {ruin_level} must be strictly below c/r = {safe_level}")]
    RuinAboveSafeLevel { ruin_level: f64, safe_level: f64 },
    #[error("R: ruin level must be non-negative, got {0}")]
    NegativeRuinLevel(f64),
    #[error("r: interest rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("c: consumption rate must be positive, got {0}")]
    NonPositiveConsumption(f64),
    #[error("lambda_d: default intensity must be positive, got {0}")]
    NonPositiveIntensity(f64),
    #[error("q: fee rate q{index} must be non-negative, got {value}")]
    NegativeFee { index: usize, value: f64 },
    #[error("epsilon: ambiguity level must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("{0}: value is not finite")]
    NotFinite(&'static str),
    #[error("control_set: {0}")]
    ControlSet(String),
    #[error("ambiguity_set: {0}")]
    AmbiguitySet(String),
}

/// The compact set 𝒦 of admissible fund positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSet {
    /// Box `[lo, hi]` per fund, enumerated on a lattice of `points` nodes per axis.
    /// Zero is always inserted into the lattice if it is not already a node.
    Box { lo: Vec2, hi: Vec2, points: [usize; 2] },
    /// Explicit finite set of positions.
    Finite { points: Vec<Vec2> },
}

impl ControlSet {
    /// The singleton {(0, 0)}: the investor never holds the funds.
    pub fn zero() -> Self {
        ControlSet::Box { lo: [0.0; 2], hi: [0.0; 2], points: [1, 1] }
    }

    pub fn symmetric_box(half_width: f64, points: usize) -> Self {
        ControlSet::Box {
            lo: [-half_width; 2],
            hi: [half_width; 2],
            points: [points; 2],
        }
    }

    fn validate(&self) -> Result<(), ParamError> {
        match self {
            ControlSet::Box { lo, hi, points } => {
                for i in 0..2 {
                    if !(lo[i].is_finite() && hi[i].is_finite()) {
                        return Err(ParamError::ControlSet("bounds must be finite".into()));
                    }
                    if !(lo[i] <= 0.0 && 0.0 <= hi[i]) {
                        return Err(ParamError::ControlSet(format!(
                            "axis {} range [{}, {}] does not contain 0",
                            i + 1,
                            lo[i],
                            hi[i]
                        )));
                    }
                    if points[i] == 0 || (points[i] == 1 && lo[i] != hi[i]) {
                        return Err(ParamError::ControlSet(format!(
                            "axis {} needs at least 2 lattice points for a non-degenerate range",
                            i + 1
                        )));
                    }
                }
                Ok(())
            }
            ControlSet::Finite { points } => {
                if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
                    return Err(ParamError::ControlSet("points must be finite".into()));
                }
                if !points.iter().any(|p| p[0] == 0.0 && p[1] == 0.0) {
                    return Err(ParamError::ControlSet("(0, 0) must be a member".into()));
                }
                Ok(())
            }
        }
    }

    /// Enumerate the set, sorted by Euclidean norm and then lexicographically.
    ///
    /// Scanning candidates in this order and replacing only on strict
    /// improvement gives the smallest-norm tie-break.
    pub fn lattice(&self) -> Vec<Vec2> {
        let mut pts = match self {
            ControlSet::Box { lo, hi, points } => {
                let axis = |i: usize| -> Vec<f64> {
                    let n = points[i];
                    let mut v: Vec<f64> = if n <= 1 {
                        vec![0.0]
                    } else {
                        (0..n)
                            .map(|k| {
                                if k + 1 == n {
                                    hi[i]
                                } else {
                                    lo[i] + (hi[i] - lo[i]) * k as f64 / (n - 1) as f64
                                }
                            })
                            .collect()
                    };
                    // snap near-zero nodes, then make sure 0 itself is present
                    let step = if n > 1 { (hi[i] - lo[i]) / (n - 1) as f64 } else { 1.0 };
                    for x in v.iter_mut() {
                        if x.abs() < 1e-12 * step.max(1e-300) {
                            *x = 0.0;
                        }
                    }
                    if !v.contains(&0.0) {
                        v.push(0.0);
                    }
                    v
                };
                let (a, b) = (axis(0), axis(1));
                let mut out = Vec::with_capacity(a.len() * b.len());
                for &p1 in &a {
                    for &p2 in &b {
                        out.push([p1, p2]);
                    }
                }
                out
            }
            ControlSet::Finite { points } => points.clone(),
        };
        pts.sort_by(|a, b| {
            linalg::norm2(*a)
                .total_cmp(&linalg::norm2(*b))
                .then(a[0].total_cmp(&b[0]))
                .then(a[1].total_cmp(&b[1]))
        });
        pts.dedup();
        pts
    }

    /// Map an arbitrary position into the set.
    pub fn clamp(&self, pi: Vec2) -> Vec2 {
        match self {
            ControlSet::Box { lo, hi, .. } => [pi[0].clamp(lo[0], hi[0]), pi[1].clamp(lo[1], hi[1])],
            ControlSet::Finite { points } => *points
                .iter()
                .min_by(|a, b| {
                    linalg::norm2(linalg::sub(**a, pi)).total_cmp(&linalg::norm2(linalg::sub(**b, pi)))
                })
                .unwrap_or(&[0.0, 0.0]),
        }
    }

    pub fn contains(&self, pi: Vec2) -> bool {
        match self {
            ControlSet::Box { lo, hi, .. } => (0..2).all(|i| lo[i] <= pi[i] && pi[i] <= hi[i]),
            ControlSet::Finite { points } => points.contains(&pi),
        }
    }

    /// Largest ‖σᵀπ‖ over the extreme points of the set.
    pub fn max_volatility(&self, sigma: &Mat2) -> f64 {
        let corners: Vec<Vec2> = match self {
            ControlSet::Box { lo, hi, .. } => {
                vec![[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]]
            }
            ControlSet::Finite { points } => points.clone(),
        };
        corners
            .into_iter()
            .map(|p| linalg::norm(linalg::mat_t_vec(sigma, p)))
            .fold(0.0, f64::max)
    }
}

/// The closed set ℒ of drift distortions available to the adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AmbiguitySet {
    /// ℒ = {0}: no model uncertainty.
    Zero,
    Ball { radius: f64 },
    Box { lo: Vec2, hi: Vec2 },
    Unconstrained,
}

impl AmbiguitySet {
    fn validate(&self) -> Result<(), ParamError> {
        match self {
            AmbiguitySet::Ball { radius } if !(*radius >= 0.0 && radius.is_finite()) => Err(
                ParamError::AmbiguitySet(format!("radius must be finite and >= 0, got {radius}")),
            ),
            AmbiguitySet::Box { lo, hi } => {
                for i in 0..2 {
                    if !(lo[i] <= 0.0 && 0.0 <= hi[i]) {
                        return Err(ParamError::AmbiguitySet(format!(
                            "axis {} range [{}, {}] does not contain 0",
                            i + 1,
                            lo[i],
                            hi[i]
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, theta: Vec2) -> Vec2 {
        match self {
            AmbiguitySet::Zero => [0.0, 0.0],
            AmbiguitySet::Unconstrained => theta,
            AmbiguitySet::Box { lo, hi } => {
                [theta[0].clamp(lo[0], hi[0]), theta[1].clamp(lo[1], hi[1])]
            }
            AmbiguitySet::Ball { radius } => {
                let n = linalg::norm(theta);
                if n <= *radius {
                    theta
                } else {
                    linalg::scale(theta, radius / n)
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, AmbiguitySet::Zero)
            || matches!(self, AmbiguitySet::Ball { radius } if *radius == 0.0)
    }
}

/// Every model constant. Field names double as the config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    pub r: f64,
    pub c: f64,
    #[serde(rename = "R")]
    pub ruin_level: f64,
    pub lambda_d: f64,
    pub mu: Vec2,
    pub sigma: Mat2,
    pub mu_b: Vec2,
    pub sigma_b: Mat2,
    pub q: Vec2,
    pub epsilon: f64,
    pub control_set: ControlSet,
    pub ambiguity_set: AmbiguitySet,
}

impl MarketParams {
    /// The parameter set used throughout the tests and the acceptance suite.
    ///
    /// The benchmark shares the funds' volatility, so the distance processes
    /// carry no diffusion of their own.
    pub fn reference() -> Self {
        let sigma = [[0.20, 0.0], [0.05, 0.15]];
        MarketParams {
            r: 0.02,
            c: 1.0,
            ruin_level: 10.0,
            lambda_d: 0.04,
            mu: [0.07, 0.05],
            sigma,
            mu_b: [0.03, 0.02],
            sigma_b: sigma,
            q: [0.2, 0.2],
            epsilon: 1.0,
            control_set: ControlSet::symmetric_box(5.0, 11),
            ambiguity_set: AmbiguitySet::Unconstrained,
        }
    }

    /// c/r, the wealth level at which the bond alone funds consumption forever.
    pub fn safe_level(&self) -> f64 {
        self.c / self.r
    }

    pub fn validate(&self) -> Result<DerivedParams, ParamError> {
        let scalars = [
            ("r", self.r),
            ("c", self.c),
            ("R", self.ruin_level),
            ("lambda_d", self.lambda_d),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(ParamError::NotFinite(name));
            }
        }
        let vectors = [("mu", self.mu), ("mu_b", self.mu_b), ("q", self.q)];
        for (name, v) in vectors {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(ParamError::NotFinite(name));
            }
        }
        for (name, m) in [("sigma", self.sigma), ("sigma_b", self.sigma_b)] {
            if !m.iter().flatten().all(|x| x.is_finite()) {
                return Err(ParamError::NotFinite(name));
            }
        }
        if self.r <= 0.0 {
            return Err(ParamError::NonPositiveRate(self.r));
        }
        if self.c <= 0.0 {
            return Err(ParamError::NonPositiveConsumption(self.c));
        }
        if self.ruin_level < 0.0 {
            return Err(ParamError::NegativeRuinLevel(self.ruin_level));
        }
        if self.ruin_level >= self.safe_level() {
            return Err(ParamError::RuinAboveSafeLevel {
                ruin_level: self.ruin_level,
                safe_level: self.safe_level(),
            });
        }
        if self.lambda_d <= 0.0 {
            return Err(ParamError::NonPositiveIntensity(self.lambda_d));
        }
        for (i, &qi) in self.q.iter().enumerate() {
            if qi < 0.0 {
                return Err(ParamError::NegativeFee { index: i + 1, value: qi });
            }
        }
        if self.epsilon <= 0.0 {
            return Err(ParamError::NonPositiveEpsilon(self.epsilon));
        }
        let det = linalg::det(&self.sigma);
        if det.abs() < SIGMA_DET_TOL {
            return Err(ParamError::SingularSigma(det.abs()));
        }
        self.control_set.validate()?;
        self.ambiguity_set.validate()?;
        Ok(DerivedParams::compute(self))
    }
}

/// Quantities derived once from [`MarketParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedParams {
    /// μ − r𝟙
    pub mu_r_delta: Vec2,
    /// μ − μᴮ
    pub mu_b_delta: Vec2,
    /// σ − σᴮ
    pub sigma_b_delta: Mat2,
    /// ½ μ_Δᵀ(σσᵀ)⁻¹μ_Δ with μ_Δ = μ − r𝟙.
    pub sharpe: f64,
    /// (σσᵀ)⁻¹μ_Δ, the direction of the frictionless optimal position.
    pub merton_direction: Vec2,
    pub kappa: f64,
}

impl DerivedParams {
    fn compute(p: &MarketParams) -> Self {
        let mu_r_delta = [p.mu[0] - p.r, p.mu[1] - p.r];
        let mu_b_delta = linalg::sub(p.mu, p.mu_b);
        let sigma_b_delta = linalg::mat_sub(&p.sigma, &p.sigma_b);
        let cov = linalg::mat_mul_t(&p.sigma, &p.sigma);
        let merton_direction = linalg::solve2(&cov, mu_r_delta);
        let sharpe = 0.5 * linalg::dot(mu_r_delta, merton_direction);
        let kappa = kappa_root(p.r, p.lambda_d, sharpe);
        DerivedParams {
            mu_r_delta,
            mu_b_delta,
            sigma_b_delta,
            sharpe,
            merton_direction,
            kappa,
        }
    }
}

/// Larger root of `r κ² − (r + λ + Σ) κ + λ = 0`.
pub(crate) fn kappa_root(r: f64, lambda_d: f64, sharpe: f64) -> f64 {
    let b = r + lambda_d + sharpe;
    let disc = b * b - 4.0 * r * lambda_d;
    // disc >= (r - λ)² >= 0 because Σ >= 0
    let sq = disc.max(0.0).sqrt();
    let big = (b + sq) / (2.0 * r);
    // polish with one Newton step on the quadratic
    let f = r * big * big - b * big + lambda_d;
    let df = 2.0 * r * big - b;
    if df.abs() > 0.0 {
        big - f / df
    } else {
        big
    }
}

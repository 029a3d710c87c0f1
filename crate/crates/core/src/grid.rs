//! Tensor grid on the truncated box `[R, c/r] × [0, y_max]²` and scalar fields on it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("{axis}: need at least 3 nodes, got {count}")]
    TooFewNodes { axis: &'static str, count: usize },
    #[error("y_max: truncation height must be positive and finite, got {0}")]
    BadHeight(f64),
    #[error("field has {got} values, grid has {expected} nodes")]
    SizeMismatch { expected: usize, got: usize },
    #[error("state {0:?} lies outside the grid")]
    OutsideGrid(State),
}

/// Role of a node in the discrete system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum NodeKind {
    /// x = R, value 1.
    Ruin,
    /// x = c/r, value 0.
    Safe,
    /// y¹ = y² = 0 with R < x < c/r.
    Corner,
    /// y¹ = 0 only.
    Face1,
    /// y² = 0 only.
    Face2,
    /// On a y = y_max face (and not on a y = 0 face).
    Far { y1: bool, y2: bool },
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny1: usize,
    pub ny2: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_max: [f64; 2],
    pub hx: f64,
    pub hy: [f64; 2],
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nx * self.ny1 * self.ny2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index; y² varies fastest, x slowest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.ny1 + j) * self.ny2 + k
    }

    #[inline]
    pub fn split(&self, n: usize) -> (usize, usize, usize) {
        let k = n % self.ny2;
        let rest = n / self.ny2;
        (rest / self.ny1, rest % self.ny1, k)
    }

    pub fn stride_x(&self) -> usize {
        self.ny1 * self.ny2
    }

    pub fn stride_y1(&self) -> usize {
        self.ny2
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.x_hi
        } else {
            self.x_lo + self.hx * i as f64
        }
    }

    #[inline]
    pub fn y1(&self, j: usize) -> f64 {
        if j + 1 == self.ny1 {
            self.y_max[0]
        } else {
            self.hy[0] * j as f64
        }
    }

    #[inline]
    pub fn y2(&self, k: usize) -> f64 {
        if k + 1 == self.ny2 {
            self.y_max[1]
        } else {
            self.hy[1] * k as f64
        }
    }

    pub fn state(&self, n: usize) -> State {
        let (i, j, k) = self.split(n);
        State::new(self.x(i), self.y1(j), self.y2(k))
    }

    pub fn kind(&self, n: usize) -> NodeKind {
        let (i, j, k) = self.split(n);
        if i == 0 {
            NodeKind::Ruin
        } else if i + 1 == self.nx {
            NodeKind::Safe
        } else if j == 0 && k == 0 {
            NodeKind::Corner
        } else if j == 0 {
            NodeKind::Face1
        } else if k == 0 {
            NodeKind::Face2
        } else if j + 1 == self.ny1 || k + 1 == self.ny2 {
            NodeKind::Far { y1: j + 1 == self.ny1, y2: k + 1 == self.ny2 }
        } else {
            NodeKind::Interior
        }
    }

    pub fn contains(&self, z: &State) -> bool {
        z.x >= self.x_lo
            && z.x <= self.x_hi
            && z.y1 >= 0.0
            && z.y1 <= self.y_max[0]
            && z.y2 >= 0.0
            && z.y2 <= self.y_max[1]
    }

    /// Cell index and local coordinate in `[0, 1]` along one axis.
    fn locate(v: f64, lo: f64, h: f64, n: usize) -> (usize, f64) {
        let s = ((v - lo) / h).clamp(0.0, (n - 1) as f64);
        let c = (s.floor() as usize).min(n - 2);
        (c, (s - c as f64).clamp(0.0, 1.0))
    }

    /// Trilinear weights of the 8 surrounding nodes, clamping `z` into the box.
    pub fn stencil(&self, z: &State) -> [(usize, f64); 8] {
        let (i, tx) = Self::locate(z.x, self.x_lo, self.hx, self.nx);
        let (j, t1) = Self::locate(z.y1, 0.0, self.hy[0], self.ny1);
        let (k, t2) = Self::locate(z.y2, 0.0, self.hy[1], self.ny2);
        let mut out = [(0usize, 0.0f64); 8];
        let mut c = 0;
        for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
            for (dj, w1) in [(0, 1.0 - t1), (1, t1)] {
                for (dk, w2) in [(0, 1.0 - t2), (1, t2)] {
                    out[c] = (self.index(i + di, j + dj, k + dk), wx * w1 * w2);
                    c += 1;
                }
            }
        }
        out
    }
}

/// Uniform grid with exact boundary nodes at `x = R`, `x = c/r` and `y = 0`.
pub fn build_grid(
    m: &Model,
    nx: usize,
    ny1: usize,
    ny2: usize,
    y_max: [f64; 2],
) -> Result<Grid, GridError> {
    for (axis, count) in [("nx", nx), ("ny1", ny1), ("ny2", ny2)] {
        if count < 3 {
            return Err(GridError::TooFewNodes { axis, count });
        }
    }
    for &h in &y_max {
        if !(h > 0.0 && h.is_finite()) {
            return Err(GridError::BadHeight(h));
        }
    }
    let x_lo = m.params.ruin_level;
    let x_hi = m.params.safe_level();
    Ok(Grid {
        nx,
        ny1,
        ny2,
        x_lo,
        x_hi,
        y_max,
        hx: (x_hi - x_lo) / (nx - 1) as f64,
        hy: [y_max[0] / (ny1 - 1) as f64, y_max[1] / (ny2 - 1) as f64],
    })
}

/// Default truncation height: ten years of the largest fund volatility in 𝒦.
pub fn default_y_max(m: &Model) -> f64 {
    let v = m.params.control_set.max_volatility(&m.params.sigma);
    if v > 0.0 {
        10.0 * v
    } else {
        1.0
    }
}

/// A scalar per grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteField {
    pub values: Vec<f64>,
}

impl DiscreteField {
    pub fn from_fn(grid: &Grid, f: impl Fn(&State) -> f64) -> Self {
        DiscreteField { values: (0..grid.len()).map(|n| f(&grid.state(n))).collect() }
    }

    pub fn check(&self, grid: &Grid) -> Result<(), GridError> {
        if self.values.len() != grid.len() {
            return Err(GridError::SizeMismatch { expected: grid.len(), got: self.values.len() });
        }
        Ok(())
    }

    pub fn at(&self, grid: &Grid, i: usize, j: usize, k: usize) -> f64 {
        self.values[grid.index(i, j, k)]
    }

    /// Trilinear interpolation.
    pub fn interpolate(&self, grid: &Grid, z: &State) -> Result<f64, GridError> {
        if !grid.contains(z) {
            return Err(GridError::OutsideGrid(*z));
        }
        Ok(grid.stencil(z).iter().map(|&(n, w)| w * self.values[n]).sum())
    }

    pub fn sup_distance(&self, other: &DiscreteField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

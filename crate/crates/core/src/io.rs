//! CSV and JSON artifacts. Floats are written in shortest round-trip form,
//! so a written field reads back bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::dynamics::TrajectoryPoint;
use crate::grid::{DiscreteField, Grid};
use crate::model::Model;
use crate::solver::PolicyField;

pub const FIELD_HEADER: &str = "x,y1,y2,value,pi1,pi2,theta1,theta2";
pub const SLICE_HEADER: &str = "x,y1,value";
pub const TRAJECTORY_HEADER: &str = "t,x,y1,y2,m1,m2,penalty,status";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Format { path: String, line: usize, message: String },
}

pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Columns `x, y1, value` at the fixed y² index `k`.
pub fn slice_csv(field: &DiscreteField, grid: &Grid, k: usize) -> String {
    let mut out = String::from(SLICE_HEADER);
    out.push('\n');
    for i in 0..grid.nx {
        for j in 0..grid.ny1 {
            let _ = writeln!(out, "{},{},{}", fmt_f64(grid.x(i)), fmt_f64(grid.y1(j)), fmt_f64(field.at(grid, i, j, k)));
        }
    }
    out
}

/// One row per node in flat index order:
/// `x, y1, y2, value, pi1, pi2, theta1, theta2`.
pub fn field_csv(field: &DiscreteField, policy: &PolicyField) -> String {
    let grid = &policy.grid;
    let mut out = String::with_capacity(grid.len() * 96);
    out.push_str(FIELD_HEADER);
    out.push('\n');
    for n in 0..grid.len() {
        let z = grid.state(n);
        let cols = [z.x, z.y1, z.y2, field.values[n], policy.pi[n][0], policy.pi[n][1], policy.theta[n][0], policy.theta[n][1]];
        let row: Vec<String> = cols.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn trajectory_csv(traj: &[TrajectoryPoint]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for p in traj {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(p.t),
            fmt_f64(p.x),
            fmt_f64(p.y[0]),
            fmt_f64(p.y[1]),
            fmt_f64(p.m[0]),
            fmt_f64(p.m[1]),
            fmt_f64(p.penalty),
            p.status.label()
        );
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

/// Parse a full-field CSV back into its grid, value field and policy.
/// The control sets are taken from `m`.
pub fn parse_field_csv(text: &str, m: &Model, path: &str) -> Result<(DiscreteField, PolicyField), IoError> {
    let bad = |line: usize, message: String| IoError::Format { path: path.to_string(), line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == FIELD_HEADER => {}
        Some((_, h)) => return Err(bad(1, format!("expected header {FIELD_HEADER:?}, found {h:?}"))),
        None => return Err(bad(1, "file is empty".into())),
    }
    let mut rows: Vec<[f64; 8]> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = [0.0; 8];
        let mut count = 0;
        for (c, tok) in line.split(',').enumerate() {
            if c >= 8 {
                count = 9;
                break;
            }
            row[c] = tok
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(n + 1, format!("column {}: {e}", c + 1)))?;
            if !row[c].is_finite() {
                return Err(bad(n + 1, format!("column {} is not finite", c + 1)));
            }
            count += 1;
        }
        if count != 8 {
            return Err(bad(n + 1, format!("expected 8 columns, found {}", line.split(',').count())));
        }
        rows.push(row);
    }
    let distinct = |c: usize| {
        let mut v: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (xs, y1s, y2s) = (distinct(0), distinct(1), distinct(2));
    if xs.len() < 3 || y1s.len() < 3 || y2s.len() < 3 {
        return Err(bad(0, "need at least 3 distinct values per axis".into()));
    }
    if rows.len() != xs.len() * y1s.len() * y2s.len() {
        return Err(bad(0, format!(
            "{} rows do not form a {}x{}x{} tensor grid",
            rows.len(),
            xs.len(),
            y1s.len(),
            y2s.len()
        )));
    }
    let (nx, ny1, ny2) = (xs.len(), y1s.len(), y2s.len());
    let grid = Grid {
        nx,
        ny1,
        ny2,
        x_lo: xs[0],
        x_hi: xs[nx - 1],
        y_max: [y1s[ny1 - 1], y2s[ny2 - 1]],
        hx: (xs[nx - 1] - xs[0]) / (nx - 1) as f64,
        hy: [y1s[ny1 - 1] / (ny1 - 1) as f64, y2s[ny2 - 1] / (ny2 - 1) as f64],
    };
    if y1s[0] != 0.0 || y2s[0] != 0.0 {
        return Err(bad(0, "distance axes must start at 0".into()));
    }
    let mut values = Vec::with_capacity(rows.len());
    let mut pi = Vec::with_capacity(rows.len());
    let mut theta = Vec::with_capacity(rows.len());
    for (n, r) in rows.iter().enumerate() {
        let z = grid.state(n);
        let tol = 1e-9 * (1.0 + z.x.abs());
        if (z.x - r[0]).abs() > tol || (z.y1 - r[1]).abs() > tol || (z.y2 - r[2]).abs() > tol {
            return Err(bad(n + 2, "rows are not in grid order or spacing is not uniform".into()));
        }
        values.push(r[3]);
        pi.push([r[4], r[5]]);
        theta.push([r[6], r[7]]);
    }
    let policy = PolicyField {
        grid,
        pi,
        theta,
        control_set: m.params.control_set.clone(),
        ambiguity_set: m.params.ambiguity_set.clone(),
    };
    Ok((DiscreteField { values }, policy))
}

pub fn read_field_csv(path: &Path, m: &Model) -> Result<(DiscreteField, PolicyField), IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    parse_field_csv(&text, m, &path.display().to_string())
}

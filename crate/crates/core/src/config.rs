//! Run configuration: a sectioned TOML document with a schema version,
//! strict key checking and line-anchored validation errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::SimConfig;
use crate::grid::{self, Grid};
use crate::model::{Model, State};
use crate::params::MarketParams;
use crate::solver::SolverConfig;
use crate::verify::{Suite, SuiteConfig, Tolerances};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("{}{key}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { line: Option<usize>, key: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny1: usize,
    pub ny2: usize,
    /// Truncation height of both distance axes; defaults to ten years of
    /// the largest fund volatility in 𝒦.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
}

/// Where simulated controls come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySource {
    Constant {
        #[serde(default)]
        pi: [f64; 2],
        #[serde(default)]
        theta: [f64; 2],
    },
    /// A full-field CSV written by `solve`.
    Csv { path: PathBuf },
    /// Solve on the configured grid first and follow the extracted feedback.
    Solved,
}

impl Default for PolicySource {
    fn default() -> Self {
        PolicySource::Constant { pi: [0.0; 2], theta: [0.0; 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub store_trajectories: bool,
    /// Number of leading paths whose trajectories are written.
    pub stored_paths: usize,
    /// Initial state (x, y1, y2).
    pub x0: [f64; 3],
    pub policy: PolicySource,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            dt: 1e-2,
            t_max: 175.0,
            n_paths: 100_000,
            seed: 20_240_601,
            store_trajectories: false,
            stored_paths: 10,
            x0: [30.0, 0.0, 0.0],
            policy: PolicySource::default(),
        }
    }
}

impl SimSection {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            t_max: self.t_max,
            n_paths: self.n_paths,
            seed: self.seed,
            store_trajectories: self.store_trajectories,
        }
    }

    pub fn initial_state(&self) -> State {
        State::new(self.x0[0], self.x0[1], self.x0[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub suite: Suite,
    pub probes: Vec<[f64; 3]>,
    pub c_disc: f64,
    pub eps_values: Vec<f64>,
    pub watermark_paths: usize,
    pub mc_x0: f64,
    pub tolerances: Tolerances,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            suite: Suite::Quick,
            probes: vec![[20.0, 1.0, 1.0], [30.0, 2.0, 2.0], [40.0, 1.0, 3.0]],
            c_disc: 1.0,
            eps_values: vec![1e-4, 1e-2, 1.0, 10.0],
            watermark_paths: 10_000,
            mc_x0: 30.0,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon,
    /// Both fee rates set to the swept value.
    Q,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default = "default_probes")]
    pub probes: Vec<[f64; 3]>,
    /// Append a row solved with ℒ = {0} (epsilon axis only).
    #[serde(default = "yes")]
    pub include_baseline: bool,
}

fn default_probes() -> Vec<[f64; 3]> {
    VerifySection::default().probes
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Worker threads; absent means one per core.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Fixed y² index of the value-slice CSV.
    pub slice_y2_index: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), threads: None, slice_y2_index: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: String,
    pub market: MarketParams,
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    /// Parse and validate. Validation messages carry the source line of the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))?;
        cfg.validate().map_err(|(section, key, message)| ConfigError::Invalid {
            line: locate_key(text, section, &key),
            key: if section.is_empty() { key } else { format!("{section}.{key}") },
            message,
        })?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    /// Semantic checks as `(section, key, message)`.
    fn validate(&self) -> Result<(), (&'static str, String, String)> {
        if self.schema_version != SCHEMA_VERSION {
            return Err((
                "",
                "schema_version".into(),
                format!("unsupported schema version {:?}, expected {SCHEMA_VERSION:?}", self.schema_version),
            ));
        }
        let model = Model::new(self.market.clone()).map_err(|e| split_message("market", &e.to_string()))?;
        if let Some(h) = self.grid.y_max {
            if !(h > 0.0 && h.is_finite()) {
                return Err(("grid", "y_max".into(), format!("truncation height must be positive and finite, got {h}")));
            }
        }
        self.build_grid(&model).map_err(|e| split_message("grid", &e.to_string()))?;
        self.solver.validate().map_err(|e| {
            let msg = e.to_string();
            let msg = msg.trim_start_matches("solver config: ");
            split_message("solver", msg)
        })?;
        self.sim.sim_config().validate().map_err(|e| split_message("sim", &e.to_string()))?;
        if self.sim.x0.iter().any(|v| !v.is_finite()) {
            return Err(("sim", "x0".into(), "initial state must be finite".into()));
        }
        if !(self.verify.c_disc >= 0.0) {
            return Err(("verify", "c_disc".into(), "slack constant must be non-negative".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(("sweep", "values".into(), "sweep list is empty".into()));
            }
            if s.probes.is_empty() {
                return Err(("sweep", "probes".into(), "at least one probe is required".into()));
            }
        }
        if self.output.threads == Some(0) {
            return Err(("output", "threads".into(), "must be at least 1".into()));
        }
        if self.output.slice_y2_index >= self.grid.ny2 {
            return Err(("output", "slice_y2_index".into(), format!("must be below ny2 = {}", self.grid.ny2)));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model, crate::params::ParamError> {
        Model::new(self.market.clone())
    }

    pub fn y_max(&self, m: &Model) -> f64 {
        self.grid.y_max.unwrap_or_else(|| grid::default_y_max(m))
    }

    pub fn build_grid(&self, m: &Model) -> Result<Grid, grid::GridError> {
        let h = self.y_max(m);
        grid::build_grid(m, self.grid.nx, self.grid.ny1, self.grid.ny2, [h, h])
    }

    pub fn suite_config(&self, m: &Model) -> SuiteConfig {
        let h = self.y_max(m);
        SuiteConfig {
            suite: self.verify.suite,
            grid: (self.grid.nx, self.grid.ny1, self.grid.ny2, [h, h]),
            solver: self.solver.clone(),
            sim: self.sim.sim_config(),
            probes: self.verify.probes.iter().map(|p| State::new(p[0], p[1], p[2])).collect(),
            c_disc: self.verify.c_disc,
            eps_values: self.verify.eps_values.clone(),
            watermark_paths: self.verify.watermark_paths,
            mc_x0: self.verify.mc_x0,
            tolerances: self.verify.tolerances,
        }
    }

    /// Canonical TOML of the fully resolved config (defaults filled in).
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the resolved config, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.resolved_toml().as_bytes()))
    }

    /// Short prefix of the hash used in artifact names.
    pub fn stem(&self, command: &str) -> String {
        format!("{command}-{}", &self.hash()[..12])
    }
}

/// Validation messages start with the key name followed by a colon.
fn split_message(section: &'static str, msg: &str) -> (&'static str, String, String) {
    match msg.split_once(": ") {
        Some((key, rest)) if !key.contains(' ') => (section, key.to_string(), rest.to_string()),
        _ => (section, "?".to_string(), msg.to_string()),
    }
}

/// 1-based line of `key = …` inside `[section]` (or a dotted sub-table of it).
pub fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut fallback = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            current = h.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        let k = k.trim().trim_matches('"');
        if k != key {
            continue;
        }
        if current == section {
            return Some(n + 1);
        }
        if current.starts_with(&format!("{section}.")) && fallback.is_none() {
            fallback = Some(n + 1);
        }
    }
    if fallback.is_none() && !section.is_empty() {
        // keys nested in a sub-table (control_set.points) report the table header
        let header = text.lines().position(|l| l.trim().starts_with(&format!("[{section}.{key}")));
        return header.map(|n| n + 1);
    }
    fallback
}

/// Provenance record written next to every set of artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<String>,
}

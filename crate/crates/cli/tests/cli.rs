use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hwm_ruin::{io, Model, State};
use tempfile::TempDir;

const MARKET: &str = r#"schema_version = "1"

[market]
r = 0.02
c = 1.0
R = 10.0
lambda_d = 0.04
mu = [0.07, 0.05]
sigma = [[0.20, 0.0], [0.05, 0.15]]
mu_b = [0.03, 0.02]
sigma_b = [[0.20, 0.0], [0.05, 0.15]]
q = [0.2, 0.2]
epsilon = 1.0

[market.control_set]
kind = "box"
lo = [-5.0, -5.0]
hi = [5.0, 5.0]
points = [11, 11]

[market.ambiguity_set]
kind = "unconstrained"
"#;

const GRID: &str = "\n[grid]\nnx = 21\nny1 = 5\nny2 = 5\ny_max = 4.0\n";

struct Run {
    dir: TempDir,
}

impl Run {
    fn new(extra: &str) -> Run {
        Run::with_grid(GRID, extra)
    }

    fn with_grid(grid: &str, extra: &str) -> Run {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), format!("{MARKET}{grid}{extra}")).unwrap();
        Run { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn exec(&self, command: &str) -> Output {
        self.exec_into(command, &self.out())
    }

    fn exec_into(&self, command: &str, out: &Path) -> Output {
        Command::new(env!("CARGO_BIN_EXE_hwm-ruin"))
            .arg(command)
            .arg("--config")
            .arg(self.dir.path().join("run.toml"))
            .arg("--out")
            .arg(out)
            .arg("--quiet")
            .env_remove("HWM_RUIN_OUT")
            .output()
            .unwrap()
    }

    fn files(&self) -> Vec<String> {
        let mut v: Vec<String> =
            fs::read_dir(self.out()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        v.sort();
        v
    }

    fn read(&self, suffix: &str) -> String {
        let name = self.files().into_iter().find(|f| f.ends_with(suffix)).unwrap_or_else(|| panic!("no {suffix}"));
        fs::read_to_string(self.out().join(name)).unwrap()
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_writes_four_artifacts_with_a_shared_stem() {
    let run = Run::new("");
    let o = run.exec("solve");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let files = run.files();
    assert_eq!(files.len(), 4, "{files:?}");
    let stem = files[0].rsplit_once('-').unwrap().0.to_string();
    assert!(stem.starts_with("solve-"));
    for suffix in ["field.csv", "slice.csv", "report.json", "manifest.json"] {
        assert!(files.contains(&format!("{stem}-{suffix}")), "{files:?}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&run.read("manifest.json")).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["files"].as_array().unwrap().len(), 4);
    assert!(run.read("field.csv").starts_with(io::FIELD_HEADER));
    assert!(run.read("slice.csv").starts_with(io::SLICE_HEADER));
}

#[test]
fn repeated_solves_are_byte_identical() {
    let run = Run::new("");
    let other = run.dir.path().join("again");
    assert_eq!(run.exec("solve").status.code(), Some(0));
    assert_eq!(run.exec_into("solve", &other).status.code(), Some(0));
    for f in run.files().iter().filter(|f| f.ends_with(".csv")) {
        let a = fs::read(run.out().join(f)).unwrap();
        let b = fs::read(other.join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn invalid_grid_value_names_the_key() {
    let run = Run::with_grid("\n[grid]\nnx = 21\nny1 = 5\nny2 = 5\ny_max = -1.0\n", "");
    let o = run.exec("solve");
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("grid.y_max"), "{err}");
    let text = fs::read_to_string(run.dir.path().join("run.toml")).unwrap();
    let line = text.lines().position(|l| l.starts_with("y_max")).unwrap() + 1;
    assert!(err.contains(&format!("line {line}:")), "{err}");
    assert!(!run.out().exists() || run.files().is_empty());
}

#[test]
fn unknown_key_and_missing_config_are_usage_errors() {
    let run = Run::new("\n[output]\ncolour = true\n");
    let o = run.exec("solve");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_hwm-ruin")).arg("solve").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn idle_simulation_recovers_the_no_invest_value() {
    let run = Run::new("\n[sim]\nn_paths = 20000\nseed = 3\nx0 = [30.0, 0.0, 0.0]\n[sim.policy]\nkind = \"constant\"\n");
    let o = run.exec("simulate");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let est: serde_json::Value = serde_json::from_str(&run.read("estimate.json")).unwrap();
    let mean = est["mean"].as_f64().unwrap();
    let se = est["stderr"].as_f64().unwrap();
    assert!((mean - 0.25).abs() <= 3.0 * se + 1e-3, "{mean} +- {se}");
    let manifest: serde_json::Value = serde_json::from_str(&run.read("manifest.json")).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([3]));
}

#[test]
fn zero_paths_is_rejected() {
    let run = Run::new("\n[sim]\nn_paths = 0\n");
    let o = run.exec("simulate");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_paths"), "{}", stderr(&o));
}

#[test]
fn stored_trajectories_have_the_documented_columns() {
    let run = Run::new(
        "\n[sim]\nn_paths = 50\nt_max = 5.0\nstore_trajectories = true\nstored_paths = 3\n\
         [sim.policy]\nkind = \"constant\"\npi = [1.0, 0.5]\n",
    );
    assert_eq!(run.exec("simulate").status.code(), Some(0));
    let paths: Vec<String> = run.files().into_iter().filter(|f| f.contains("-path-")).collect();
    assert_eq!(paths.len(), 3, "{paths:?}");
    for p in paths {
        let text = fs::read_to_string(run.out().join(p)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(io::TRAJECTORY_HEADER));
        let rows: Vec<&str> = lines.collect();
        assert!(rows.len() > 1);
        assert!(rows.iter().all(|l| l.split(',').count() == 8));
    }
}

#[test]
fn simulate_reads_a_solved_policy_from_csv() {
    let run = Run::new("");
    assert_eq!(run.exec("solve").status.code(), Some(0));
    let field = run.files().into_iter().find(|f| f.ends_with("field.csv")).unwrap();
    fs::copy(run.out().join(&field), run.dir.path().join("policy.csv")).unwrap();
    fs::write(run.dir.path().join("broken.csv"), "x,y1,y2,value\n1,2,3,4\n").unwrap();

    let sim = "\n[sim]\nn_paths = 200\nx0 = [30.0, 1.0, 1.0]\n[sim.policy]\nkind = \"csv\"\n";
    let ok = Run::new(&format!("{sim}path = \"{}\"\n", run.dir.path().join("policy.csv").display()));
    let o = ok.exec("simulate");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    for name in ["missing.csv", "broken.csv"] {
        let bad = Run::new(&format!("{sim}path = \"{}\"\n", run.dir.path().join(name).display()));
        let o = bad.exec("simulate");
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
        assert!(stderr(&o).contains(name), "{}", stderr(&o));
    }
}

const ZERO_TOLERANCES: &str = "\n[verify]\nsuite = \"quick\"\nwatermark_paths = 200\n\
    [verify.tolerances]\nfrictionless = 0.0\nno_invest = 0.0\nsandwich = 0.0\n";

#[test]
fn verify_with_zero_tolerances_fails_and_names_checks() {
    let run = Run::new(ZERO_TOLERANCES);
    let o = run.exec("verify");
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("failed checks:") && err.contains("frictionless_error"), "{err}");
    let report: serde_json::Value = serde_json::from_str(&run.read("verify.json")).unwrap();
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len(), "{names:?}");
    assert!(run.read("verify.txt").contains("checks passed"));
}

#[test]
fn empty_sweep_is_rejected() {
    let run = Run::new("\n[sweep]\naxis = \"q\"\nvalues = []\n");
    let o = run.exec("sweep");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("values"), "{}", stderr(&o));
}

#[test]
fn single_value_sweep_matches_a_plain_solve() {
    let probe = [30.0, 1.0, 2.0];
    let run = Run::new(&format!(
        "\n[sweep]\naxis = \"q\"\nvalues = [0.2]\nprobes = [[{}, {}, {}]]\n",
        probe[0], probe[1], probe[2]
    ));
    assert_eq!(run.exec("solve").status.code(), Some(0));
    let o = run.exec("sweep");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let cfg = hwm_ruin::config::RunConfig::from_path(&run.dir.path().join("run.toml")).unwrap();
    let m: Model = cfg.model().unwrap();
    let field = run.files().into_iter().find(|f| f.ends_with("field.csv")).unwrap();
    let (values, _) = io::read_field_csv(&run.out().join(field), &m).unwrap();
    let grid = cfg.build_grid(&m).unwrap();
    let expected = values.interpolate(&grid, &State::new(probe[0], probe[1], probe[2])).unwrap();

    let csv = run.read("sweep.csv");
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("param,value,probe_1,iterations"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "q");
    let got: f64 = row[2].parse().unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    assert_eq!(row[4], "true");
    assert!(lines.next().is_none(), "q sweeps carry no baseline row");
}

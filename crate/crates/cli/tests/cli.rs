use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn optex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optex"))
        .current_dir(dir)
        .env_remove("OPTEX_OUT_DIR")
        .env_remove("OPTEX_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const BROWNIAN: &str = "[model]\na = 0.4\nb = 0.0\nsigma = 0.8\nrho = 0.375\nc = 0.3\nalpha = 0.25\n";

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_brownian_reports_the_closed_form_level() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), BROWNIAN);
    let out = optex(tmp.path(), &["--config", &cfg, "--out", "o", "solve"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&tmp.path().join("o/critical_prices.json"));
    let cp = &doc["critical_prices"];
    assert_eq!(cp["branch"], "brownian");
    assert!((cp["x_star"].as_f64().unwrap() - 1.9).abs() < 1e-12);
    assert!((cp["n"].as_f64().unwrap() - 0.625).abs() < 1e-12);
    assert!(!tmp.path().join("o/boundary.csv").exists());
}

#[test]
fn solve_mean_reverting_writes_a_decreasing_boundary() {
    let tmp = TempDir::new().unwrap();
    let out = optex(tmp.path(), &["--out", "o", "solve"]);
    assert!(out.status.success());
    let doc = read_json(&tmp.path().join("o/critical_prices.json"));
    let x0 = doc["critical_prices"]["x0"].as_f64().unwrap();

    let text = std::fs::read_to_string(tmp.path().join("o/boundary.csv")).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let (x, f) = l.split_once(',').unwrap();
            (x.parse().unwrap(), f.parse().unwrap())
        })
        .collect();
    assert!(rows.len() > 10);
    assert!(rows.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 < w[0].1));
    assert_eq!(*rows.last().unwrap(), (x0, 0.0));

    let surface = std::fs::read_to_string(tmp.path().join("o/value_surface.csv")).unwrap();
    let mut lines = surface.lines().skip_while(|l| l.starts_with('#'));
    assert_eq!(lines.next(), Some("x,y,w,w_x,w_xx,w_y,region"));
    assert!(lines.all(|l| l.split(',').count() == 7));
}

#[test]
fn json_format_replaces_tables() {
    let tmp = TempDir::new().unwrap();
    let out = optex(tmp.path(), &["--out", "o", "--format", "json", "solve"]);
    assert!(out.status.success());
    let doc = read_json(&tmp.path().join("o/boundary.json"));
    assert_eq!(doc["x"].as_array().unwrap().len(), doc["F"].as_array().unwrap().len());
    assert!(tmp.path().join("o/value_surface.json").exists());
    assert!(!tmp.path().join("o/boundary.csv").exists());
}

#[test]
fn missing_model_constant_exits_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &BROWNIAN.replace("sigma = 0.8\n", ""));
    let out = optex(tmp.path(), &["--config", &cfg, "solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));
}

#[test]
fn invalid_parameters_exit_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &BROWNIAN.replace("sigma = 0.8", "sigma = -1.0"));
    assert_eq!(optex(tmp.path(), &["--config", &cfg, "solve"]).status.code(), Some(2));
}

#[test]
fn loose_quadrature_fails_verification_by_name() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[quadrature]\nrel_tol = 1e-2\n");
    let out = optex(tmp.path(), &["--config", &cfg, "--out", "o", "verify"]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("quadrature_rel_tol"), "{stderr}");
    let report = read_json(&tmp.path().join("o/verify_report.json"));
    assert_eq!(report["passed"], false);
}

#[test]
fn default_instance_verifies() {
    let tmp = TempDir::new().unwrap();
    let out = optex(tmp.path(), &["--out", "o", "verify"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn exhausted_reserve_simulates_to_zero() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[sim]\nn_paths = 50\n");
    let out = optex(tmp.path(), &["--config", &cfg, "--out", "o", "simulate", "0.5", "0"]);
    assert!(out.status.success());
    let doc = read_json(&tmp.path().join("o/sim_result.json"));
    assert_eq!(doc["result"]["mean"].as_f64(), Some(0.0));
    assert_eq!(doc["result"]["std_error"].as_f64(), Some(0.0));
}

#[test]
fn seed_flag_beats_environment_and_output_is_byte_stable() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[sim]\nn_paths = 200\nh = 0.01\n");
    let run = |out: &str, env_seed: Option<&str>, flag_seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_optex"));
        cmd.current_dir(tmp.path()).env_remove("OPTEX_OUT_DIR");
        match env_seed {
            Some(s) => cmd.env("OPTEX_SEED", s),
            None => cmd.env_remove("OPTEX_SEED"),
        };
        cmd.args(["--config", &cfg, "--out", out]);
        if let Some(s) = flag_seed {
            cmd.args(["--seed", s]);
        }
        cmd.args(["simulate", "0.5", "1"]);
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(tmp.path().join(out).join("sim_result.json")).unwrap()
    };
    let a = run("a", None, Some("7"));
    let b = run("b", Some("99"), Some("7"));
    let c = run("c", Some("99"), None);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(c, run("d", Some("99"), None));
}

#[test]
fn out_dir_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_optex"))
        .current_dir(tmp.path())
        .env("OPTEX_OUT_DIR", "from-env")
        .arg("solve")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("from-env/critical_prices.json").exists());
}

#[test]
fn sweep_rejects_the_brownian_endpoint() {
    let tmp = TempDir::new().unwrap();
    let out = optex(tmp.path(), &["--out", "o", "sweep", "b", "0", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_table_per_value() {
    let tmp = TempDir::new().unwrap();
    let out = optex(tmp.path(), &["--out", "o", "sweep", "sigma", "0.8", "0.9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(tmp.path().join("o/boundary_sigma_0.8.csv").exists());
    assert!(tmp.path().join("o/boundary_sigma_0.9.csv").exists());
    let report = read_json(&tmp.path().join("o/sweep_report.json"));
    assert_eq!(report["passed"], true);
}

#[test]
fn oracle_writes_grid_and_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[grid]\nnx = 200\nny = 30\n");
    let out = optex(tmp.path(), &["--config", &cfg, "--out", "o", "oracle", "--levels", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = std::fs::read_to_string(tmp.path().join("o/qvi_grid.csv")).unwrap();
    assert!(text.lines().any(|l| l == "x,y,value,active"));
    let report = read_json(&tmp.path().join("o/oracle_report.json"));
    assert_eq!(report["levels"].as_array().unwrap().len(), 2);
}

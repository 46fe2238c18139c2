use std::path::Path;
use std::process::{Command, Output};

use paofed::harness::{preset, ExperimentConfig};
use serde_json::Value;

fn paofed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paofed")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn tiny(dir: &Path) -> std::path::PathBuf {
    let mut c = preset("default-async", 1.0 / 32.0).unwrap();
    c.model.dim = 8;
    c.model.m = 2;
    c.experiment.mc_runs = 1;
    c.experiment.test_size = 50;
    c.analysis.correlation_samples = 2000;
    c.experiment.output_dir = dir.join("out");
    let path = dir.join("tiny.toml");
    c.save(&path).unwrap();
    path
}

#[test]
fn preset_round_trips_through_toml() {
    let out = paofed(&["preset", "heavy-delay", "--scale", "0.5"]);
    assert!(out.status.success());
    let c = ExperimentConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(c.delay.tail, 0.8);
    assert_eq!(c.clients.count, 128);
}

#[test]
fn run_writes_tables_and_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let s = stdout_json(&paofed(&["run", cfg.to_str().unwrap()]));
    assert_eq!(s["algorithms"].as_array().unwrap().len(), 6);
    assert!(s["mu_bounds"].is_array());
    assert!(dir.path().join("out/default-async_metrics.csv").exists());
    assert!(dir.path().join("out/default-async_summary.json").exists());
}

#[test]
fn compare_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let cfg = cfg.to_str().unwrap();
    let s = stdout_json(&paofed(&["compare", cfg, "--algorithms", "pao-fed-u1,online-fedsgd"]));
    let names: Vec<&str> = s["algorithms"].as_array().unwrap().iter().map(|a| a["algorithm"].as_str().unwrap()).collect();
    assert_eq!(names, ["pao-fed-u1", "online-fedsgd"]);
    let s = stdout_json(&paofed(&["sweep", cfg, "--param", "m", "--values", "1,4"]));
    assert_eq!(s["rows"].as_array().unwrap().len(), 12);
    assert!(dir.path().join("out/default-async_sweep_m.csv").exists());
}

#[test]
fn predict_msd_on_small_system() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::default();
    c.clients.count = 4;
    c.clients.group_sizes = vec![100];
    c.clients.availability = vec![0.8, 0.5, 0.3, 0.1];
    c.model.dim = 4;
    c.model.m = 2;
    c.model.kernel_width = Some(1.0);
    c.delay.l_max = 2;
    c.analysis.correlation_samples = 5000;
    c.analysis.iterations = 20;
    c.algorithms.default_mu = 0.1;
    c.experiment.output_dir = dir.path().to_path_buf();
    let path = dir.path().join("msd.toml");
    c.save(&path).unwrap();
    let s = stdout_json(&paofed(&["predict-msd", path.to_str().unwrap()]));
    assert_eq!(s["expectation"], "exact");
    assert!(s["spectral_radius"].as_f64().unwrap() < 1.0);
    let csv = std::fs::read_to_string(dir.path().join("experiment_msd.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
}

#[test]
fn errors_are_reported_as_json() {
    let out = paofed(&["run", "/nonexistent/config.toml"]);
    assert!(!out.status.success());
    let e: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(e["error"], "file-not-found");

    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = paofed(&["compare", cfg.to_str().unwrap(), "--algorithms", "nonsense"]);
    let e: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(e["error"], "invalid-argument");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\ndim = 4\nm = 9\n").unwrap();
    let e: Value = serde_json::from_slice(&paofed(&["run", bad.to_str().unwrap()]).stderr).unwrap();
    assert_eq!(e["error"], "invalid-config");
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gmam_core::equilibria::read_branch_csv;
use gmam_core::scaling::read_sweep_csv;
use gmam_core::Curve;
use serde_json::Value;
use tempfile::TempDir;

fn gmam(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_gmam"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--output")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn double_well_equilibria_are_labelled() {
    let dir = TempDir::new().unwrap();
    let out = gmam(dir.path(), r#"{"model": "double_well"}"#, &["equilibria"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_branch_csv(fs::File::open(dir.path().join("out/equilibria.csv")).unwrap()).unwrap();
    let labels: Vec<(f64, &str)> = rows.iter().map(|r| (r.state[0], r.stability.as_str())).collect();
    assert_eq!(labels.len(), 3, "{labels:?}");
    for ((x, label), (want_x, want)) in labels.iter().zip([(-1.0, "stable"), (0.0, "saddle"), (1.0, "stable")]) {
        assert!((x - want_x).abs() < 1e-10 && *label == want, "{labels:?}");
    }
}

#[test]
fn double_well_mincurve_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = r#"{"model": "double_well", "gmam": {"num_points": 100}}"#;
    let out = gmam(dir.path(), config, &["mincurve"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = json(&dir.path().join("out/action.json"));
    assert!((report["action"].as_f64().unwrap() - 0.5).abs() < 1e-3, "{report}");
    assert_eq!(report["converged"], Value::Bool(true));

    let text = fs::read_to_string(dir.path().join("out/curve.csv")).unwrap();
    assert_eq!(text.lines().count(), 101);
    let curve = Curve::read_csv(text.as_bytes()).unwrap();
    assert_eq!(curve.len(), 100);
    assert_eq!(curve.dim(), 2);

    let convergence = fs::read_to_string(dir.path().join("out/convergence.csv")).unwrap();
    assert!(convergence.starts_with("iteration,action,residual"));

    let first: Vec<Vec<u8>> = ["curve.csv", "convergence.csv", "action.json"]
        .iter()
        .map(|f| fs::read(dir.path().join("out").join(f)).unwrap())
        .collect();
    assert!(gmam(dir.path(), config, &["mincurve"]).status.success());
    for (f, before) in ["curve.csv", "convergence.csv", "action.json"].iter().zip(first) {
        assert_eq!(fs::read(dir.path().join("out").join(f)).unwrap(), before, "{f} differs between runs");
    }
}

#[test]
fn maier_stein_mincurve_finds_the_off_axis_path() {
    let dir = TempDir::new().unwrap();
    let out = gmam(dir.path(), r#"{"model": "maier_stein"}"#, &["mincurve"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let action = json(&dir.path().join("out/action.json"))["action"].as_f64().unwrap();
    assert!(action > 0.3 && action < 0.4, "{action}");
}

#[test]
fn normal_form_sweep_fit_recovers_the_exponent() {
    let dir = TempDir::new().unwrap();
    let config = r#"{"model": "saddle_node_normal_form",
                     "sweep": {"v_min": 0.01, "v_max": 0.1, "points": 8, "leading_fit_v_max": 0.1}}"#;
    let out = gmam(dir.path(), config, &["sweep-fit"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let fit = json(&dir.path().join("out/fit.json"));
    let beta = fit["beta"].as_f64().unwrap();
    assert!((1.49..=1.51).contains(&beta), "{fit}");
    assert!((fit["V_th"].as_f64().unwrap() - 1.0).abs() < 1e-6, "{fit}");
    for key in ["s0", "s1", "s2"] {
        assert!(fit[key].is_number(), "{key} missing: {fit}");
    }
    let rows = read_sweep_csv(fs::File::open(dir.path().join("out/sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.3));
}

#[test]
fn normal_form_check_passes_without_config() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gmam"))
        .args(["normal-form-check", "--output"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(json(&dir.path().join("normal_form_check.json"))["pass"].as_bool().unwrap());
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (r#"{"model": "double_well", "gmam": {"time_stp": 1.0}}"#, "equilibria", "time_stp"),
        (r#"{"model": "saddle_node_normal_form", "sweep": {"points": 0}}"#, "sweep-fit", "sweep.points"),
        (r#"{"model": "hexagon"}"#, "equilibria", "hexagon"),
        (r#"{"model": "double_well"}"#, "sweep-fit", "bias"),
        (r#"{"model": "double_well", "gmam": {"num_points": 2}}"#, "mincurve", "num_points"),
        (r#"{"model": "double_well""#, "equilibria", "EOF"),
    ];
    for (config, command, needle) in cases {
        let out = gmam(dir.path(), config, &[command]);
        assert_eq!(out.status.code(), Some(2), "{config}: {}", stderr(&out));
        assert!(stderr(&out).contains(needle), "{config}: {}", stderr(&out));
    }
    let out = gmam(dir.path(), r#"{"model": "double_well"}"#, &["mincurve", "--bias", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn superlattice_equilibria_schema() {
    let dir = TempDir::new().unwrap();
    let out = gmam(dir.path(), r#"{"model": "superlattice"}"#, &["equilibria"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = json(&dir.path().join("out/equilibria.json"));
    let window = summary["bistable_window_V"].as_array().unwrap();
    let (lo, hi) = (window[0].as_f64().unwrap(), window[1].as_f64().unwrap());
    assert!(lo < 0.52 && 0.52 < hi, "{summary}");
    for name in ["upper", "saddle", "lower"] {
        let rows = read_branch_csv(fs::File::open(dir.path().join(format!("out/branch_{name}.csv"))).unwrap()).unwrap();
        assert!(rows.len() > 2, "{name}");
        let dim = rows[0].state.len();
        assert!(rows.iter().all(|r| r.state.len() == dim && r.extra.is_some_and(|j| j > 0.0)), "{name}");
    }
}

#[test]
fn superlattice_sweep_fit_schema() {
    // a coarse grid keeps this to a fraction of the default run
    let dir = TempDir::new().unwrap();
    let config = r#"{"model": "superlattice", "gmam": {"num_points": 50},
                     "sweep": {"v_min": 1e-3, "points": 6, "leading_fit_v_max": 0.1}}"#;
    let out = gmam(dir.path(), config, &["sweep-fit"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let fit = json(&dir.path().join("out/fit.json"));
    for key in ["V_th", "beta", "s0", "s1", "s2"] {
        assert!(fit[key].as_f64().is_some_and(f64::is_finite), "{key} missing: {fit}");
    }
    assert!((fit["V_th"].as_f64().unwrap() - 0.5578).abs() < 1e-3, "{fit}");
    assert!(fit["reference"]["s0"].is_number());
    let rows = read_sweep_csv(fs::File::open(dir.path().join("out/sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
}

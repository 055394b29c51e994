use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn collapse_lab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_collapse-lab"));
    cmd.args(args).env_remove("COLLAPSE_LAB_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn final_layer_report_has_simplex_coefficients() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "fl.json", r#"{"experiment": "final-layer", "k": 4, "R": 1, "p": 2}"#);
    let out = tmp.path().join("out");
    let o = collapse_lab(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let report = read_report(&out);
    let alpha = report["alpha"].as_f64().unwrap();
    let beta = report["beta"].as_f64().unwrap();
    assert!((alpha - 0.8660254).abs() <= 1e-5, "{alpha}");
    assert!((beta + 0.2886751).abs() <= 1e-5, "{beta}");
    assert_eq!(report["seed"], 0);
    assert!(report.as_object().unwrap().values().all(Value::is_number));
    assert!(!out.join("plot.svg").exists());

    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("class,iteration,objective,residual,step\r\n"));
}

#[test]
fn ode_collapse_case_gap_vanishes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "ode.json", r#"{"experiment": "ode", "p": [0.25, 0.25, 0.5], "seed": 9}"#);
    let out = tmp.path().join("out");
    let o = collapse_lab(&["run", &cfg, "--plot", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(&out);
    assert!(report["gap_final"].as_f64().unwrap().abs() < 5e-3);
    assert_eq!(report["seed"], 9);
    let svg = fs::read_to_string(out.join("plot.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("t,a1,a2,a3,gap\r\n"));
}

#[test]
fn missing_required_key_exits_2_without_writing() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", r#"{"experiment": "final-layer", "R": 1}"#);
    let out = tmp.path().join("out");
    let o = collapse_lab(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`k`"));
    assert!(!out.exists());
}

#[test]
fn validation_failures_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    for (i, body) in [
        r#"{"experiment": "spectral-gap", "k": 3}"#,
        r#"{"experiment": "final-layer", "k": 3, "p": 0.5}"#,
        r#"{"experiment": "final-layer", "k": 3, "grid": {"R": [1, -1]}}"#,
        r#"{"experiment": "margin", "particles": 5}"#,
        r#"not json"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = write_config(tmp.path(), &format!("c{i}.json"), body);
        let o = collapse_lab(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
        assert_eq!(o.status.code(), Some(2), "{body}");
        assert!(!out.exists(), "{body}");
    }
    let o = collapse_lab(&["run", "/nonexistent/config.json"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = collapse_lab(&["verify", "everything"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "nc.json", r#"{"experiment": "final-layer", "k": 5, "max_iter": 2}"#);
    let out = tmp.path().join("out");
    let o = collapse_lab(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not converged"));
}

#[test]
fn identical_config_gives_identical_csv() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "m.json", r#"{"experiment": "margin", "particles": 120, "T": 500, "seed": 4}"#);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = collapse_lab(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
        assert_eq!(o.status.code(), Some(0));
        outputs.push((fs::read(out.join("results.csv")).unwrap(), fs::read(out.join("report.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_out_key_is_used_and_flag_overrides_it() {
    let tmp = TempDir::new().unwrap();
    let from_config = tmp.path().join("from-config");
    let body = format!(r#"{{"experiment": "final-layer", "k": 3, "out": {:?}}}"#, from_config.to_str().unwrap());
    let cfg = write_config(tmp.path(), "c.json", &body);
    assert_eq!(collapse_lab(&["run", &cfg], &[]).status.code(), Some(0));
    assert!(from_config.join("report.json").exists());
    let flag = tmp.path().join("flag");
    assert_eq!(collapse_lab(&["run", &cfg, "--out", flag.to_str().unwrap()], &[]).status.code(), Some(0));
    assert!(flag.join("report.json").exists());
}

#[test]
fn grid_cells_run_in_isolated_directories() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "grid.json",
        r#"{"experiment": "final-layer", "k": 3, "grid": {"k": [2, 3, 4], "p": [1.5, 3]}}"#,
    );
    let out = tmp.path().join("grid");
    let o = collapse_lab(&["run", &cfg, "--out", out.to_str().unwrap()], &[("COLLAPSE_LAB_THREADS", "2")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..6 {
        assert!(out.join(format!("cell_{i:03}")).join("results.csv").exists());
    }
    let report = read_report(&out.join("cell_005"));
    assert_eq!((report["k"].as_f64(), report["p"].as_f64()), (Some(4.0), Some(3.0)));

    let mut reader = csv::Reader::from_path(out.join("grid.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    let overrides: Value = serde_json::from_str(&rows[1][2]).unwrap();
    assert_eq!(overrides, serde_json::json!({"k": 2, "p": 3}));
}

#[test]
fn invalid_thread_cap_is_rejected() {
    let o = collapse_lab(&["verify", "hessian"], &[("COLLAPSE_LAB_THREADS", "0")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_oracle_prints_sixty_passing_lines() {
    let o = collapse_lab(&["verify", "oracle"], &[("COLLAPSE_LAB_THREADS", "1")]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let checks: Vec<&str> = stdout.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert_eq!(checks.len(), 60);
    assert!(checks.iter().all(|l| l.starts_with("PASS") && l.contains("measured=") && l.contains("tol")));
}

#[test]
fn metrics_experiment_reports_simplex_as_collapsed() {
    let tmp = TempDir::new().unwrap();
    let s = (3f64).sqrt() / 2.0;
    let body = format!(
        r#"{{"experiment": "metrics", "features": [[1, 0], [1, 0], [-0.5, {s}], [-0.5, {m}]], "labels": [0, 0, 1, 2],
            "map": [[1, 0], [-0.5, {s}], [-0.5, {m}]]}}"#,
        m = -s
    );
    let cfg = write_config(tmp.path(), "metrics.json", &body);
    let out = tmp.path().join("out");
    let o = collapse_lab(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(&out);
    for key in ["within_class_variance", "equinorm_deviation", "equiangular_deviation", "self_duality_deviation"] {
        assert!(report[key].as_f64().unwrap() < 1e-12, "{key}: {}", report[key]);
    }
}

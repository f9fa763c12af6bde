use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sparse_lv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-lv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn pattern_from_sigma() {
    let o = sparse_lv(&["pattern", "--d", "2", "--sigma", "2,1,3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("6 2 block-permutation -"));
    assert_eq!(lines.next(), Some("2 3"));
    assert_eq!(lines.nth(3), Some("4 5"));
}

#[test]
fn pattern_json_reports_regularity() {
    let o = sparse_lv(&["pattern", "--n", "30", "--d", "4", "--model", "general-regular", "--seed", "3", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["nnz"], 120);
    assert_eq!(v["row_degrees_ok"], true);
    assert_eq!(v["col_degrees_ok"], true);
}

#[test]
fn solve_round_trips_a_pattern_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = sparse_lv(&["pattern", "--n", "40", "--d", "5", "--model", "general-regular", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let pattern = dir.path().join("pattern.txt");
    let o = sparse_lv(&["solve", "--pattern-file", pattern.to_str().unwrap(), "--alpha", "6", "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for key in ["feasible", "min_x", "argmin", "min_Z", "residual_inf", "alpha", "n", "d", "seed"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["n"], 40);
    assert!(v["residual_inf"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn solve_csv_header() {
    let o = sparse_lv(&["solve", "--n", "100", "--d", "10", "--kappa", "8"]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o).lines().next(),
        Some("feasible,min_x,argmin,min_Z,residual_inf,alpha,n,d,seed")
    );
}

#[test]
fn saturated_solve() {
    let o = sparse_lv(&["solve", "--n", "200", "--d", "10", "--kappa", "1", "--saturated", "pivoting", "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["complementarity_residual"].as_f64().unwrap() <= 1e-9);
    assert!(v["kkt_violation"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn sweep_outputs_are_identical_across_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |dir: &Path, threads: &str| {
        vec![
            "sweep".to_string(),
            "--n".into(),
            "200".into(),
            "--d".into(),
            "8".into(),
            "--kappa-grid".into(),
            "1,2,4".into(),
            "--trials".into(),
            "12".into(),
            "--seed".into(),
            "9".into(),
            "--threads".into(),
            threads.into(),
            "--out".into(),
            dir.to_str().unwrap().into(),
        ]
    };
    for (dir, threads) in [(a.path(), "1"), (b.path(), "4")] {
        let args = args(dir, threads);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = sparse_lv(&refs);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read(a.path(), "sweep.csv"), read(b.path(), "sweep.csv"));
    assert_eq!(read(a.path(), "trials.csv"), read(b.path(), "trials.csv"));
    let sweep = read(a.path(), "sweep.csv");
    assert!(sweep.starts_with("kappa,alpha,trials,feasible_count,feasible_fraction,diverged"));
    assert_eq!(sweep.lines().count(), 4);
    let meta: serde_json::Value = serde_json::from_str(&read(a.path(), "meta.json")).unwrap();
    assert_eq!(meta["config"]["master_seed"], 9);
    assert!(meta["code_version"].is_string());
    assert!(meta["wall_time_seconds"].is_number());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(
        &cfg,
        "n = 120\nd = 6\nmodel = \"block-permutation\"\nkappa_grid = [8.0]\ntrials_per_point = 3\nmaster_seed = 2\n",
    )
    .unwrap();
    let o = sparse_lv(&["sweep", "--config", cfg.to_str().unwrap(), "--trials", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "8");
    assert_eq!(fields[2], "5");
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "n = 100\nd = 7\n").unwrap();
    let o = sparse_lv(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(&cfg, "n = 100\nkappa = 3\n").unwrap();
    let o = sparse_lv(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = sparse_lv(&["sweep", "--n", "100", "--d", "10", "--kappa-grid", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_3() {
    let o = sparse_lv(&["solve", "--n", "60", "--model", "full", "--alpha", "0.05"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn dynamics_writes_series_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = sparse_lv(&[
        "dynamics", "--n", "50", "--d", "5", "--null-interactions", "--t-end", "4", "--samples", "9", "--tracked", "3",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let series = read(dir.path(), "dynamics.csv");
    assert!(series.starts_with("t,min,max,mean,dist\n"));
    assert_eq!(series.lines().count(), 10);
    let last: Vec<f64> = series.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[3] - 1.0 / (1.0 + (-4f64).exp())).abs() < 1e-7);
    assert!(read(dir.path(), "traces.csv").lines().count() > 1);
    assert!(dir.path().join("meta.json").exists());
}

#[test]
fn spectrum_and_gap_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sparse_lv(&["spectrum", "--n", "80", "--d", "4", "--trials", "3", "--kappa", "8", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(dir.path(), "spectrum.csv").starts_with("trial,seed,max_real_part,localization_error"));
    let eig = read(dir.path(), "eigenvalues.csv");
    assert!(eig.starts_with("re,im\n"));
    assert_eq!(eig.lines().count(), 81);

    let o = sparse_lv(&["gap", "--n", "10", "--d", "3", "--model", "general-regular", "--trials", "5", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 5);
    assert_eq!(v["norm_violations"], 0);
}

#[test]
fn histogram_degenerate() {
    let o = sparse_lv(&["histogram", "--n", "40", "--d", "4", "--trials", "2", "--null-interactions", "--bins", "5", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["mean"], 1.0);
    assert_eq!(v["variance"], 0.0);
    assert_eq!(v["samples"], 80);
}

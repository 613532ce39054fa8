use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use entdetect::data;
use entdetect::estimation::{support_of, ExpectationData};
use entdetect::{optimized_state, MeasurementModel};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_entdetect"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn bundled_state() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/optimized_state.json")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn solve_reproduces_lo_value_and_endpoint() {
    let dir = TempDir::new().unwrap();
    let state = bundled_state();
    let out = run(&["solve", "--state", state.to_str().unwrap(), "--p1", "0.7481", "--scenario", "lo", "--out", "lo.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("lo.json"));
    assert!((v["p2"].as_f64().unwrap() - 0.0944).abs() < 1e-2);
    assert_eq!(v["manifest"]["command"], "solve");
    assert_eq!(v["manifest"]["input_digests"].as_object().unwrap().len(), 1);

    let out = run(&["solve", "--p1", "1", "--scenario", "1locc", "--out", "end.json"], dir.path());
    assert!(out.status.success());
    assert!(json(&dir.path().join("end.json"))["p2"].as_f64().unwrap().abs() < 1e-6);
}

#[test]
fn malformed_state_exits_2_naming_the_field() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"vector": [1, 0, 0, 0, 0, 0, 0, 0, "zero"]}"#).unwrap();
    let out = run(&["solve", "--state", "bad.json", "--p1", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vector[8]"));

    let out = run(&["solve", "--p1", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["solve", "--p1", "0.5", "--scenario", "2locc"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn curve_grid_of_two_has_endpoint_rows() {
    let dir = TempDir::new().unwrap();
    let out = run(&["curve", "--scenario", "lo", "--grid", "2", "--out", "c.csv"], dir.path());
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("c.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[1][0], "1");
    assert!(dir.path().join("c.csv.manifest.json").exists());
}

#[test]
fn default_curve_has_100_monotone_rows() {
    let dir = TempDir::new().unwrap();
    let out = run(&["curve", "--scenario", "1locc", "--out", "c.csv"], dir.path());
    assert!(out.status.success());
    let p2: Vec<f64> = csv_rows(&dir.path().join("c.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(p2.len(), 100);
    assert!(p2.windows(2).all(|w| w[1] <= w[0] + 1e-6));
}

#[test]
fn inner_curve_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let args = |out: &'static str| vec!["curve", "--scenario", "lo", "--grid", "3", "--bound", "inner", "--samples", "10000", "--seed", "17", "--out", out];
    assert!(run(&args("a.csv"), dir.path()).status.success());
    assert!(run(&args("b.csv"), dir.path()).status.success());
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
    let mut ma = json(&dir.path().join("a.csv.manifest.json"));
    let mut mb = json(&dir.path().join("b.csv.manifest.json"));
    ma["duration_s"] = Value::Null;
    mb["duration_s"] = Value::Null;
    assert_eq!(ma, mb);
    assert_eq!(ma["seed"], 17);
}

#[test]
fn gap_search_single_iteration_echoes_initial_point() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"restarts": 1, "iterations": 1, "seed": 4,
        "initial": {"e1": 0.5443, "phi": 2.0, "theta": 1.5, "lambda_a": [0.1, 0, 0, 0.2, 0, 0, 0, 0, 0]}}"#;
    fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let out = run(&["gap-search", "--config", "cfg.json", "--out", "trace.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let best = json(&dir.path().join("trace.csv.best.json"));
    assert_eq!(best["params"]["phi"], 2.0);
    assert_eq!(best["params"]["lambda_a"][3], 0.2);
    let rows = csv_rows(&dir.path().join("trace.csv"));
    assert_eq!(rows.len(), 1);
}

#[test]
fn gap_column_matches_components() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"restarts": 2, "iterations": 6, "seed": 8}"#).unwrap();
    let out = run(&["gap-search", "--config", "cfg.json", "--out", "trace.csv"], dir.path());
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("trace.csv"));
    assert_eq!(rows.len(), 12);
    for r in rows {
        let v: Vec<f64> = r[14..18].iter().map(|s| s.parse().unwrap()).collect();
        assert!((v[3] - (v[1] - v[2])).abs() <= 1e-9);
    }
    fs::write(dir.path().join("bad.json"), r#"{"restarts": 0, "iterations": 6, "seed": 8}"#).unwrap();
    assert_eq!(run(&["gap-search", "--config", "bad.json", "--out", "t.csv"], dir.path()).status.code(), Some(2));
}

#[test]
fn shuffled_simulation_matches_printed_setting_masses() {
    let dir = TempDir::new().unwrap();
    let n = 200_000u64;
    let out = run(&["simulate", "--bundled-tables", "--shuffled", "--rounds", &n.to_string(), "--seed", "5", "--out", "r.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = json(&dir.path().join("r.csv.summary.json"));
    let empirical = s["pm_x_empirical"].as_array().unwrap();
    for (p, e) in data::shuffled().pm_x.iter().zip(empirical) {
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((e.as_f64().unwrap() - p).abs() <= 3.0 * sigma, "{p} vs {e}");
    }
    let rows = csv_rows(&dir.path().join("r.csv"));
    let lo_n = rows.iter().filter(|r| r[1] == "LO" && r[7] == "N").count() as f64;
    let lo = rows.iter().filter(|r| r[1] == "LO").count() as f64;
    assert_eq!(s["summary"]["p2_lo"].as_f64().unwrap(), lo_n / lo);
}

#[test]
fn simulation_summary_matches_records_and_rejects_zero_rounds() {
    let dir = TempDir::new().unwrap();
    let out = run(&["simulate", "--bundled-tables", "--scenario", "1locc", "--rounds", "20000", "--seed", "2", "--out", "r.csv"], dir.path());
    assert!(out.status.success());
    let s = json(&dir.path().join("r.csv.summary.json"));
    let rows = csv_rows(&dir.path().join("r.csv"));
    let n = rows.iter().filter(|r| r[7] == "N").count() as f64;
    assert_eq!(s["summary"]["empirical_p2"].as_f64().unwrap(), n / rows.len() as f64);
    assert_eq!(run(&["simulate", "--bundled-tables", "--rounds", "0"], dir.path()).status.code(), Some(2));
}

fn write_expectations(path: &Path, noise: f64) {
    let mm = MeasurementModel::standard();
    let mut data = ExpectationData::from_state(&optimized_state(), &mm, &support_of(&data::optimal_locc()));
    let mut text = String::from("a,b,x,y,value\n");
    for (i, c) in data.cells().iter().enumerate() {
        let v = (c.value.unwrap() + noise * if i % 2 == 0 { 1.0 } else { -1.0 }).clamp(0.0, 1.0);
        text.push_str(&format!("{},{},{},{},{v}\n", c.a + 1, c.b + 1, c.x + 1, c.y + 1));
    }
    fs::write(path, text).unwrap();
    data = ExpectationData::read_csv(fs::File::open(path).unwrap(), mm.layout()).unwrap();
    assert!(data.missing().is_empty());
}

#[test]
fn estimate_exact_noisy_and_empty_inputs() {
    let dir = TempDir::new().unwrap();
    write_expectations(&dir.path().join("exact.csv"), 0.0);
    let out = run(&["estimate", "--expectations", "exact.csv", "--out", "est.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(json(&dir.path().join("est.json"))["residual"].as_f64().unwrap() <= 1e-8);

    write_expectations(&dir.path().join("noisy.csv"), 0.01);
    let out = run(&["estimate", "--expectations", "noisy.csv", "--out", "noisy.json"], dir.path());
    assert!(out.status.success());
    let v = json(&dir.path().join("noisy.json"));
    assert!(v["residual"].as_f64().unwrap() > 1e-8);
    assert!(v["min_eigenvalue"].as_f64().unwrap() >= -1e-9);

    fs::write(dir.path().join("empty.csv"), "").unwrap();
    assert_eq!(run(&["estimate", "--expectations", "empty.csv"], dir.path()).status.code(), Some(2));
    fs::write(dir.path().join("header.csv"), "a,b,x,y,value\n").unwrap();
    assert_eq!(run(&["estimate", "--expectations", "header.csv"], dir.path()).status.code(), Some(2));
}

#[test]
fn validate_bundled_corrupted_and_cross_check() {
    let dir = TempDir::new().unwrap();
    let out = run(&["validate", "--bundled-tables", "--scenario", "1locc", "--tol", "1e-3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));

    let out = run(&["validate", "--cross-check", "--out", "report.json"], dir.path());
    assert!(out.status.success());
    let report = json(&dir.path().join("report.json"));
    for check in report["checks"].as_array().unwrap() {
        assert!(check["max_abs_diff"].as_f64().unwrap() <= 1e-3);
    }

    let mut set = data::locc_from_printed_factors().unwrap().to_json_value();
    set["n_table"][0][4] = serde_json::json!(0.9);
    fs::write(dir.path().join("bad.json"), set.to_string()).unwrap();
    let out = run(&["validate", "--instructions", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("exceeds s(x,y|a)"), "{stdout}");
}

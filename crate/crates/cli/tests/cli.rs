use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use q4fp_core::market_data::{covariance, daily_returns, load_prices_csv};
use q4fp_core::qubo::QuboProblem;
use q4fp_core::report::strip_wall_time;
use serde_json::Value;

fn q4fp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_q4fp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = q4fp(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    assert_eq!(text.lines().count(), 1, "stderr: {text}");
    serde_json::from_str(text.trim()).expect("one JSON line")
}

/// History with 6 assets plus a matching targets file.
fn inputs(dir: &Path) {
    ok(
        dir,
        &["synth", "--assets", "6", "--days", "80", "--seed", "2"],
    );
    let targets =
        "ticker,expected_return\nT00,0.05\nT01,0.12\nT02,-0.03\nT03,0.25\nT04,0.0\nT05,0.08\n";
    fs::write(dir.join("targets.csv"), targets).unwrap();
}

fn report(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    strip_wall_time(&mut v);
    v
}

#[test]
fn synth_writes_requested_shape_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth", "--assets", "5", "--days", "250", "--seed", "1", "--out", "a",
        ],
    );
    ok(
        d,
        &[
            "synth", "--assets", "5", "--days", "250", "--seed", "1", "--out", "b",
        ],
    );
    let a = fs::read(d.join("a/history.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/history.csv")).unwrap());
    let p = load_prices_csv(&a[..]).unwrap();
    assert_eq!((p.n_days(), p.n_assets()), (250, 5));
    assert!(p.values().iter().all(|v| *v > 0.0));
}

#[test]
fn synth_rejects_too_few_days() {
    let dir = tempfile::tempdir().unwrap();
    let out = q4fp(dir.path(), &["synth", "--days", "2"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_line(&out)["error"], "config");
}

#[test]
fn predict_keeps_covariance_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    inputs(d);
    for out in ["a", "b"] {
        ok(
            d,
            &[
                "predict",
                "--history",
                "history.csv",
                "--targets",
                "targets.csv",
                "--seed",
                "7",
                "--out",
                out,
            ],
        );
    }
    let a = fs::read(d.join("a/scenario.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/scenario.csv")).unwrap());

    let hist = load_prices_csv(fs::File::open(d.join("history.csv")).unwrap()).unwrap();
    let scen = load_prices_csv(&a[..]).unwrap();
    assert_eq!(scen.values().row(0), hist.values().row(hist.n_days() - 1));
    let h = covariance(&daily_returns(&hist)).unwrap();
    let s = covariance(&daily_returns(&scen)).unwrap();
    let worst = h
        .values()
        .iter()
        .zip(s.values().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "covariance drift {worst}");
}

#[test]
fn predict_names_missing_ticker() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    inputs(d);
    fs::write(d.join("short.csv"), "ticker,expected_return\nT00,0.1\n").unwrap();
    let out = q4fp(
        d,
        &[
            "predict",
            "--history",
            "history.csv",
            "--targets",
            "short.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"], "input");
    assert!(e["message"].as_str().unwrap().contains("T01"));
}

#[test]
fn missing_file_and_missing_key_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        q4fp(d, &["solve", "--dataset", "absent.csv"]).status.code(),
        Some(2)
    );
    assert_eq!(q4fp(d, &["solve"]).status.code(), Some(4));
    assert_eq!(
        q4fp(d, &["solve", "--set", "nope=1"]).status.code(),
        Some(4)
    );
    assert_eq!(
        q4fp(d, &["solve", "--solver", "dwave"]).status.code(),
        Some(4)
    );
}

#[test]
fn malformed_csv_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.csv"), "date,A\n2024-01-01,1.0\n2024-01-02,-3\n").unwrap();
    let out = q4fp(d, &["solve", "--dataset", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"]
        .as_str()
        .unwrap()
        .contains("row 3"));
}

#[test]
fn solve_puts_budget_on_dominant_asset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let csv = "date,UP,DOWN\n2024-01-01,100,100\n2024-01-02,101,97\n2024-01-03,102.1,99\n\
               2024-01-04,103,95\n2024-01-05,104.2,96.5\n2024-01-06,105.1,93\n";
    fs::write(d.join("pair.csv"), csv).unwrap();
    ok(
        d,
        &[
            "solve",
            "--dataset",
            "pair.csv",
            "--solver",
            "exhaustive",
            "--set",
            "qubo.budget=1000",
        ],
    );
    let r = report(&d.join("report.json"));
    assert_eq!(r["assets"][0]["ticker"], "UP");
    assert_eq!(r["assets"][0]["weight"], 1000.0);
    assert_eq!(r["assets"][1]["weight"], 0.0);
    assert_eq!(r["feasibility"]["budget_met"], true);
}

#[test]
fn exhaustive_guard_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--assets", "13", "--days", "30"]);
    let out = q4fp(
        d,
        &[
            "solve",
            "--dataset",
            "history.csv",
            "--solver",
            "exhaustive",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("24"));
}

#[test]
fn pipeline_report_replays_from_its_own_echo() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    inputs(d);
    ok(
        d,
        &[
            "pipeline",
            "--history",
            "history.csv",
            "--targets",
            "targets.csv",
            "--seed",
            "9",
            "--out",
            "a",
        ],
    );
    let first = report(&d.join("a/report.json"));
    assert_eq!(first["config"]["seed"], "9");
    assert_eq!(first["seeds"]["master"], 9);

    ok(
        d,
        &[
            "pipeline",
            "--config",
            "a/report.json",
            "--out",
            "b",
            "--threads",
            "2",
        ],
    );
    assert_eq!(report(&d.join("b/report.json")), first);
    assert_eq!(
        fs::read(d.join("a/scenario.csv")).unwrap(),
        fs::read(d.join("b/scenario.csv")).unwrap()
    );
}

#[test]
fn config_file_and_overrides_layer_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    inputs(d);
    fs::write(
        d.join("run.cfg"),
        "# run\ndataset = history.csv\nseed = 4\nqubo.levels = 3\naur.rounds = 2\n",
    )
    .unwrap();
    ok(d, &["solve", "--config", "run.cfg", "--seed", "5"]);
    let r = report(&d.join("report.json"));
    assert_eq!(r["config"]["seed"], "5");
    assert_eq!(r["config"]["qubo.levels"], "3");
    assert_eq!(r["reduction"]["rounds"].as_array().unwrap().len(), 2);
    let kept = r["reduction"]["reduced_universe"].as_array().unwrap().len();
    assert_eq!(r["best_bits"].as_str().unwrap().len(), 3 * kept);
}

#[test]
fn qubo_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    inputs(d);
    ok(
        d,
        &[
            "qubo",
            "--dataset",
            "history.csv",
            "--set",
            "qubo.budget=250",
        ],
    );
    let text = fs::read(d.join("qubo.txt")).unwrap();
    let q = QuboProblem::read_dump(&text[..]).unwrap();
    assert_eq!(q.n_vars(), 12);
    assert_eq!(q.budget(), 250.0);
    let mut again = Vec::new();
    q.write_dump(&mut again).unwrap();
    assert_eq!(again, text);
}

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acdc-se")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().map(String::from).collect()
}

#[test]
fn bogus_method_is_a_usage_error() {
    let out = run(&["estimate", "--method", "bogus", "--grid", "toy3", "--meas", "m.csv", "--out", "e.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--help"), "{err}");
    assert!(err.contains("unknown method"), "{err}");
}

#[test]
fn unknown_flag_and_missing_seed() {
    assert_eq!(run(&["pf", "--grid", "toy3", "--out", "x.csv", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["benchmark", "--scenario", "s.json", "--out", "r"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_grid_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["pf", "--grid", "no_such_grid.json", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let meas = dir.path().join("m.csv");
    let truth = dir.path().join("truth.csv");
    let est = dir.path().join("est.csv");
    let out = run(&[
        "simulate", "--grid", "hybrid4", "--seed", "5", "--time", "0", "--placement", "full", "--out", s(&meas), "--truth",
        s(&truth),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["estimate", "--method", "drse", "--grid", "hybrid4", "--meas", s(&meas), "--out", s(&est)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let est_rows = lines(&est);
    assert_eq!(est_rows[0], "node_id,kind,v,theta");
    assert_eq!(est_rows.len(), 5);
    let trace = lines(&dir.path().join("est_trace.csv"));
    assert_eq!(trace[0], "iteration,converter,p_vsc_ac,p_vsc_dc,p_loss,mismatch,lambda");
    assert!(trace.len() > 1);

    // estimates stay close to the truth they were simulated from
    let v = |rows: &[String]| -> Vec<f64> { rows[1..].iter().map(|r| r.split(',').nth(2).unwrap().parse().unwrap()).collect() };
    for (a, b) in v(&est_rows).iter().zip(v(&lines(&truth))) {
        assert!((a - b).abs() < 0.02, "{a} vs {b}");
    }
}

#[test]
fn unobservable_estimate_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let meas = dir.path().join("m.csv");
    // a SCADA-only tick leaves the 33-bus AC region without injections
    assert!(run(&["simulate", "--grid", "case33_hybrid", "--seed", "1", "--out", s(&meas)]).status.success());
    let out = run(&["estimate", "--method", "drse", "--grid", "case33_hybrid", "--meas", s(&meas), "--out", s(&dir.path().join("e.csv"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unobservable"));
}

#[test]
fn train_then_estimate_with_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let meas = dir.path().join("m.csv");
    let profiles = dir.path().join("p.csv");
    assert!(run(&["gen-profiles", "--grid", "hybrid4", "--seed", "2", "--days", "30", "--out", s(&profiles)]).status.success());
    let out = run(&[
        "train", "--grid", "hybrid4", "--seed", "3", "--profiles", s(&profiles), "--trials", "300", "--out", s(&model),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run(&["simulate", "--grid", "hybrid4", "--seed", "4", "--hour", "12", "--out", s(&meas)]).status.success());
    for method in ["drse_dnn", "cwls_pseudo30"] {
        let est = dir.path().join(format!("{method}.csv"));
        let out = run(&[
            "estimate", "--method", method, "--grid", "hybrid4", "--meas", s(&meas), "--model", s(&model), "--out", s(&est),
        ]);
        assert!(out.status.success(), "{method}: {}", String::from_utf8_lossy(&out.stderr));
    }
    // a network method without a model is rejected as invalid input
    let out = run(&["estimate", "--method", "drse_dnn", "--grid", "hybrid4", "--meas", s(&meas), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_writes_tables_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("s.json");
    std::fs::write(
        &sc,
        r#"{"grid": "hybrid4", "methods": ["drse", "cwls"], "runs": 4, "time": 0, "placement": "full"}"#,
    )
    .unwrap();
    let mut bytes = Vec::new();
    for (k, workers) in ["1", "2"].iter().enumerate() {
        let out_dir = dir.path().join(format!("r{k}"));
        let out = run(&["benchmark", "--scenario", s(&sc), "--seed", "11", "--workers", workers, "--out", s(&out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for f in ["aggregate.csv", "runs.csv", "timing.csv", "trace_boundary.csv"] {
            assert!(out_dir.join(f).exists(), "{f}");
        }
        bytes.push((std::fs::read(out_dir.join("runs.csv")).unwrap(), std::fs::read(out_dir.join("aggregate.csv")).unwrap()));
    }
    assert_eq!(bytes[0], bytes[1]);
}

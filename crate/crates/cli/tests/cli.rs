use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn qdroop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdroop"))
        .args(args)
        .env_remove("QDROOP_TOL")
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

fn run(args: &[&str]) -> (i32, Value, String) {
    let out = qdroop(args);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    (out.status.code().unwrap(), report(&out), text)
}

#[test]
fn solve_two_bus_zi() {
    let f = fixture("two_bus.net");
    let (code, rep, _) = run(&["solve", "--model", "zi", f.to_str().unwrap()]);
    assert_eq!(code, 0);
    let e_l = rep["result"]["solution"]["E_L"][0].as_f64().unwrap();
    let e_i = rep["result"]["solution"]["E_I"][0].as_f64().unwrap();
    assert_eq!(format!("{e_l:.9}"), "0.833333333");
    assert_eq!(format!("{e_i:.9}"), "0.916666667");
    assert!((e_l - 5.0 / 6.0).abs() < 1e-11);
    assert!((e_i - 11.0 / 12.0).abs() < 1e-11);
}

#[test]
fn stability_two_bus() {
    let f = fixture("two_bus.net");
    let (code, rep, _) = run(&["stability", f.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(rep["result"]["hurwitz"], true);
    let margin = rep["result"]["margin"].as_f64().unwrap();
    assert!((margin + 0.5).abs() < 1e-11);
}

#[test]
fn low_gain_shares_follow_gain_ratios() {
    let f = fixture("fig1b.net");
    let (code, rep, text) = run(&["share", "--limit", "low", f.to_str().unwrap()]);
    assert_eq!(code, 0);
    let shares: Vec<f64> = rep["result"]["linearized"]["shares"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(shares, vec![0.4, 0.4, 0.2]);
    assert!(text.contains("0.400000000000, 0.400000000000, 0.200000000000"));
}

#[test]
fn report_header_is_reproducible() {
    let f = fixture("two_bus.net");
    let (_, rep, _) = run(&["reduce", f.to_str().unwrap()]);
    assert_eq!(rep["tool"], "qdroop");
    assert_eq!(rep["version"], env!("CARGO_PKG_VERSION"));
    let digest = rep["input_sha256"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert!(rep["tolerances"]["tol_fixed"].as_f64().unwrap() == 1e-9);
    let (_, again, _) = run(&["reduce", f.to_str().unwrap()]);
    assert_eq!(rep, again);
}

#[test]
fn tolerance_override_from_environment() {
    let f = fixture("two_bus.net");
    let out = Command::new(env!("CARGO_BIN_EXE_qdroop"))
        .args(["solve", f.to_str().unwrap()])
        .env("QDROOP_TOL", "1e-7")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["tolerances"]["tol_fixed"].as_f64(), Some(1e-7));
    let bad = Command::new(env!("CARGO_BIN_EXE_qdroop"))
        .args(["solve", f.to_str().unwrap()])
        .env("QDROOP_TOL", "-1")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn positive_gain_is_an_input_error() {
    let text = std::fs::read_to_string(fixture("two_bus.net"))
        .unwrap()
        .replace("k = -1.0", "k = 1.0");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.net");
    std::fs::write(&path, text).unwrap();
    let (code, rep, _) = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(rep["error"]["class"], "input");
    assert!(rep["error"]["message"]
        .as_str()
        .unwrap()
        .contains("gain must be negative"));
}

#[test]
fn syntax_error_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.net");
    std::fs::write(
        &path,
        "[[bus]]\nid = \"L1\"\nkind = \"load\"\nvoltage = 1.0\n",
    )
    .unwrap();
    let (code, rep, _) = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(rep["error"]["line"], 4);
    assert_eq!(rep["error"]["column"], 1);
}

#[test]
fn missing_file_is_an_input_error() {
    let (code, rep, _) = run(&["solve", "/nonexistent/network.net"]);
    assert_eq!(code, 2);
    assert_eq!(rep["input_sha256"], Value::Null);
}

#[test]
fn heavy_loading_is_a_negative_result() {
    let text = std::fs::read_to_string(fixture("two_bus.net"))
        .unwrap()
        .replace("i_shunt = 0.0", "i_shunt = 0.0\nq = -0.2");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("heavy.net");
    std::fs::write(&path, text).unwrap();
    let (code, rep, _) = run(&["solve", "--model", "cp", path.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert_eq!(rep["error"]["class"], "analysis");
}

#[test]
fn validate_and_reduce_fixtures() {
    for name in ["two_bus.net", "fig1b.net"] {
        let f = fixture(name);
        let (code, rep, _) = run(&["validate", f.to_str().unwrap()]);
        assert_eq!(code, 0, "{name}");
        assert_eq!(rep["result"]["passed"], true);
        let (code, rep, _) = run(&["reduce", f.to_str().unwrap()]);
        assert_eq!(code, 0, "{name}");
        let w1 = rep["result"]["w1"].as_array().unwrap();
        for row in w1 {
            let s: f64 = row
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_f64().unwrap())
                .sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn optimality_on_impedance_loads() {
    let f = fixture("two_bus.net");
    let (code, rep, _) = run(&["optimality", f.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(rep["result"]["status"], "pass");
    let c = rep["result"]["cost"]["C_total"].as_f64().unwrap();
    let q_loss = rep["result"]["cost"]["Q_loss"].as_f64().unwrap();
    let q_load = rep["result"]["cost"]["Q_load"].as_f64().unwrap();
    let c_volt = rep["result"]["cost"]["C_volt"].as_f64().unwrap();
    assert!((c - (q_loss + q_load + c_volt)).abs() < 1e-12);
}

#[test]
fn simulate_writes_csv_and_flags_collapse() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let f = fixture("fig1b.net");
    let (code, rep, _) = run(&[
        "simulate",
        f.to_str().unwrap(),
        "--gain-scale",
        "0.05",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert_eq!(rep["result"]["status"], "collapsed");
    let text = std::fs::read_to_string(&csv).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("t,E_L_1,"));
    assert!(header.ends_with(",Q_I_3,status"));
    assert!(text.lines().last().unwrap().ends_with(",collapsed"));

    let (code, rep, _) = run(&["simulate", f.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(rep["result"]["status"], "converged");
}

#[test]
fn share_at_reduced_gain_scale() {
    let f = fixture("fig1b.net");
    let (code, rep, _) = run(&["share", "--gain-scale", "0.05", f.to_str().unwrap()]);
    assert_eq!(code, 0);
    let shares: Vec<f64> = rep["result"]["linearized"]["shares"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let sum: f64 = shares.iter().sum();
    assert!((sum - 1.0).abs() < 1e-9);
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.json");
    let f = fixture("two_bus.net");
    let out = qdroop(&[
        "solve",
        f.to_str().unwrap(),
        "-o",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    assert_eq!(rep["command"], "solve");
}

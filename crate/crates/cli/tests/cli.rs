use std::process::Command;

use serde_json::Value;

fn trigmin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_trigmin")).args(args).output().unwrap()
}

#[test]
fn minmod_reports_both_methods() {
    let out = trigmin(&["minmod", "--n", "64", "--seed", "3"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let a = v["mesh_linearized"]["value"].as_f64().unwrap();
    let b = v["dense_oracle"]["value"].as_f64().unwrap();
    assert!(b <= a + 1e-12 && a - b < 1e-3, "{a} {b}");
}

#[test]
fn refusals_exit_with_two() {
    for args in [
        &["minmod", "--n", "2"][..],
        &["simulate", "--dist", "cauchy", "--n", "10"],
        &["report", "--criteria", "12"],
        &["simulate", "--n", "20", "--replicates", "0"],
    ] {
        let out = trigmin(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn report_exit_codes() {
    let ok = trigmin(&["report", "--criteria", "9", "--format", "csv"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("PASS C9"));
    let bad = trigmin(&["report", "--criteria", "6"]);
    assert_eq!(bad.status.code(), Some(3));
    let v: Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(v[0]["passed"], Value::Bool(false));
}

#[test]
fn csv_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sb.csv");
    let out = trigmin(&[
        "smallball", "--n", "200", "--t", "30", "--samples", "20000", "--format", "csv", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "delta,p,stderr");
    assert_eq!(lines.len(), 5);
}

#[test]
fn classify_lists_every_site() {
    let out = trigmin(&["classify", "--n", "64", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4096 + 1);
}

use std::process::{Command, Output};

use serde_json::Value;

fn weakcalc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weakcalc")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = weakcalc(&["betti", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_descriptor_is_a_usage_error() {
    assert_eq!(weakcalc(&["space", "--space", "klein_bottle:n=4"]).status.code(), Some(2));
    assert_eq!(weakcalc(&["space", "--space", "mesh:/does/not/exist.off"]).status.code(), Some(2));
    assert_eq!(weakcalc(&["gamma2", "--refine", "3"]).status.code(), Some(2));
}

#[test]
fn sphere_betti_numbers() {
    let out = weakcalc(&["betti", "--space", "icosphere:subdiv=3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), r#"{"betti":[1,0,1]}"#);
}

#[test]
fn torus_betti_numbers_with_full_report() {
    let out = weakcalc(&["betti", "--space", "flat_torus:n=8", "--report", "full"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["betti"], serde_json::json!([1, 2, 1]));
    assert!(v["verdicts"].as_array().is_some_and(|a| !a.is_empty()));
}

#[test]
fn output_is_deterministic() {
    let args = ["gamma2", "--space", "flat_torus:n=8", "--seed", "7"];
    let a = weakcalc(&args);
    let b = weakcalc(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn seed_changes_the_sampled_functions() {
    let a = weakcalc(&["gamma2", "--space", "flat_torus:n=8", "--seed", "1"]);
    let b = weakcalc(&["gamma2", "--space", "flat_torus:n=8", "--seed", "2"]);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn verdicts_carry_the_report_fields() {
    let out = weakcalc(&["heat", "--space", "flat_torus:n=8"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    for r in v["verdicts"].as_array().unwrap() {
        for key in ["name", "paper_anchor", "lhs", "rhs", "gap", "tol", "pass", "resolution"] {
            assert!(r.get(key).is_some(), "{key} missing in {r}");
        }
        assert_eq!(r["resolution"]["seed"], 42);
    }
}

#[test]
fn impossible_tolerance_exits_one() {
    let out = weakcalc(&["gamma2", "--space", "flat_torus:n=8", "--tol-scale", "1e-30"]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    assert!(v["verdicts"].as_array().unwrap().iter().any(|r| r["pass"] == false));
}

#[test]
fn transport_between_components_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let mut w0 = vec![0.0; 32];
    let mut w1 = vec![0.0; 32];
    w0[0] = 1.0;
    w1[31] = 1.0;
    std::fs::write(&a, serde_json::to_string(&w0).unwrap()).unwrap();
    std::fs::write(&b, serde_json::to_string(&w1).unwrap()).unwrap();
    let out = weakcalc(&[
        "bb",
        "--space",
        "flat_torus:n=4+flat_torus:n=4",
        "--mu0",
        a.to_str().unwrap(),
        "--mu1",
        b.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn csv_and_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("heat.csv");
    let report = dir.path().join("report.json");
    let out = weakcalc(&[
        "heat",
        "--space",
        "flat_torus:n=8",
        "--refine",
        "1",
        "--csv",
        csv.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let mut rows = csv::Reader::from_path(&csv).unwrap();
    let header: Vec<String> = rows.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..2], ["vertex", "mass"]);
    let records: Vec<csv::StringRecord> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 64);
    let mass: f64 = records.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!((mass - 4.0 * std::f64::consts::PI.powi(2)).abs() < 1e-9);

    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(saved["verdicts"], stdout_json(&out)["verdicts"]);
}

#[test]
fn single_criterion_of_the_battery() {
    let out = weakcalc(&["suite", "--criterion", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let names: Vec<&str> = v["verdicts"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"criterion-4"));
    assert!(names.iter().all(|n| n.starts_with("4.") || *n == "criterion-4"));
}

#[test]
fn full_battery_on_the_flat_torus() {
    let out = weakcalc(&["suite", "--space", "flat_torus:n=16", "--kappa", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v = stdout_json(&out);
    let verdicts = v["verdicts"].as_array().unwrap();
    for id in 1..=7 {
        let name = format!("criterion-{id}");
        assert!(verdicts.iter().any(|r| r["name"] == name.as_str() && r["pass"] == true), "{name}");
    }
}

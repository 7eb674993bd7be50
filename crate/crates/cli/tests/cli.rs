use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_screc");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// 30 users x 25 items, every user rating 8 distinct items at distinct times.
fn ratings(dir: &Path) -> std::path::PathBuf {
    let mut text = String::new();
    let mut t = 100;
    for u in 0..30 {
        for k in 0..8 {
            t += 1;
            text.push_str(&format!("u{u},i{},{},{t}\n", (u * 7 + k * 3) % 25, 1 + (u + k) % 5));
        }
    }
    let path = dir.join("ratings.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn lines(path: &Path) -> HashSet<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn analyze_rejects_zero_p_before_loading() {
    let out = run(&["analyze", "--input", "/nonexistent.csv", "--p", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_input_is_a_data_error() {
    assert_eq!(run(&["analyze", "--input", "/nonexistent.csv"]).status.code(), Some(3));
}

#[test]
fn rpa_with_zero_baseline_is_numeric_error() {
    assert_eq!(run(&["rpa", "--at-rate", "0.3", "--at-full", "0"]).status.code(), Some(4));
    let out = run(&["rpa", "--at-rate", "0.33", "--at-full", "0.3"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["rpa"].as_f64().unwrap() - 10.0).abs() < 1e-9);
}

#[test]
fn grid_produces_one_report_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let input = ratings(dir.path());
    let out = run(&["analyze", "--input", s(&input), "--k", "4", "--p", "0.1,0.2,0.3", "--alpha", "0.3,0.5,0.7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reports: Value = serde_json::from_slice(&out.stdout).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 9);
    for r in reports {
        assert_eq!(r["schema"], "screc/1");
        assert_eq!(r["n_interactions"], 240);
        assert!(r["rmse_sc"].as_f64().unwrap() > 0.0);
        assert!(r.get("timing").is_none());
    }
}

#[test]
fn score_covers_every_rating_and_select_all_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = ratings(dir.path());
    let scores = dir.path().join("scores.csv");
    let out = run(&["score", "--input", s(&input), "--k", "4", "--folds", "5", "--output", s(&scores)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&scores).unwrap();
    assert_eq!(text.lines().count(), 240 + 1);
    let sidecar: Value = serde_json::from_slice(&std::fs::read(dir.path().join("scores.csv.run.json")).unwrap()).unwrap();
    assert_eq!(sidecar["fold_rmse"].as_array().unwrap().len(), 5);

    let selected = dir.path().join("all.csv");
    let out = run(&["select", "--input", s(&input), "--scores", s(&scores), "--strategy", "sc_high", "--rate", "1.0", "--output", s(&selected)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&selected), lines(&input));

    let out = run(&["select", "--input", s(&input), "--scores", s(&scores), "--strategy", "best", "--rate", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn holdout_keeps_one_test_entry_per_user() {
    let dir = tempfile::tempdir().unwrap();
    let input = ratings(dir.path());
    let (train, test) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    assert!(run(&["holdout", "--input", s(&input), "--train-output", s(&train), "--test-output", s(&test)]).status.success());
    let (train, test) = (lines(&train), lines(&test));
    assert_eq!(test.len(), 30);
    assert_eq!(train.len(), 210);
    assert!(train.is_disjoint(&test));
    assert_eq!(train.union(&test).cloned().collect::<HashSet<_>>(), lines(&input));
}

#[test]
fn correlate_defaults_to_first_two_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.csv");
    std::fs::write(&path, "x,y\n1,2\n2,4\n3,6.5\n4,8\n").unwrap();
    let out = run(&["correlate", "--input", s(&path)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["results"][0]["pearson_r"].as_f64().unwrap() > 0.99);
    assert_eq!(v["results"][0]["n"], 4);
}

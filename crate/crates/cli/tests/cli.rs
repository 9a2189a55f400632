//! End-to-end tests of the command-line interface: pipelines, file outputs,
//! exit codes, and rerun determinism.

use std::path::Path;
use std::process::{Command, Output};

fn poolfit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poolfit"))
        .args(args)
        .current_dir(dir)
        .env_remove("POOLFIT_OUT")
        .output()
        .expect("binary runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    serde_json::from_slice(&output.stdout).expect("stdout is JSON")
}

fn simulate_small(dir: &Path) {
    let out = poolfit(
        &["simulate", "--J", "6", "--files-min", "20", "--files-max", "60", "--seed", "1", "--out", "sim"],
        dir,
    );
    assert!(out.status.success());
}

#[test]
fn simulate_then_fit_partial_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let status = stdout_json(&poolfit(&["simulate", "--J", "30", "--seed", "1", "--out", "sim"], tmp.path()));
    assert_eq!(status["projects"], 30);
    assert!(tmp.path().join("sim/corpus.csv").exists());
    assert!(tmp.path().join("sim/truth.json").exists());
    assert!(tmp.path().join("sim/manifest.json").exists());

    let fit = stdout_json(&poolfit(
        &["fit", "--data", "sim/corpus.csv", "--model", "partial", "--out", "fit"],
        tmp.path(),
    ));
    assert_eq!(fit["converged"], true, "fit summary: {fit}");
    assert_eq!(fit["model"], "partial_pool");
    assert!(tmp.path().join("fit/fit.json").exists());
    assert!(tmp.path().join("fit/manifest.json").exists());
}

#[test]
fn validate_prints_table_and_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path());
    let args = |out: &'static str| {
        vec![
            "validate", "--data", "sim/corpus.csv", "--seed", "7", "--iters", "400", "--warmup", "200", "--out", out,
        ]
    };
    let first = poolfit(&args("v1"), tmp.path());
    assert!(first.status.success());
    let table = String::from_utf8_lossy(&first.stdout);
    for label in ["Model", "Full Pool", "Unpooled", "Partial Pool"] {
        assert!(table.contains(label), "missing `{label}` in:\n{table}");
    }

    let second = poolfit(&args("v2"), tmp.path());
    assert!(second.status.success());
    let a = std::fs::read(tmp.path().join("v1/rmse.json")).unwrap();
    let b = std::fs::read(tmp.path().join("v2/rmse.json")).unwrap();
    assert_eq!(a, b, "rmse.json must be byte-identical for identical command, seed, and input");

    let json: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 3);
    assert!(json["rows"][0].get("seconds").is_none(), "timings belong in the manifest only");
}

#[test]
fn validate_single_model_row() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path());
    let out = poolfit(
        &["validate", "--data", "sim/corpus.csv", "--model", "full", "--iters", "400", "--warmup", "200"],
        tmp.path(),
    );
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("Full Pool"));
    assert!(!table.contains("Partial Pool"));
}

#[test]
fn thresholds_csv_has_monotone_rows() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path());
    let out = poolfit(
        &["thresholds", "--data", "sim/corpus.csv", "--seed", "3", "--iters", "600", "--warmup", "300", "--out", "thr"],
        tmp.path(),
    );
    assert!(out.status.success());
    let csv = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "project,t70,t80,t90");
    assert_eq!(lines.len() - 1, 6, "one row per project:\n{csv}");
    for line in &lines[1..] {
        let values: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert!(values[0] < values[1] && values[1] < values[2], "non-monotone row `{line}`");
    }
    assert!(tmp.path().join("thr/thresholds.csv").exists());
    assert!(tmp.path().join("thr/thresholds.json").exists());

    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("thr/thresholds.json")).unwrap()).unwrap();
    assert_eq!(json["role"], "controller");
    assert_eq!(json["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn effect_reports_pooled_and_per_project() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path());
    let pooled = stdout_json(&poolfit(&["effect", "--data", "sim/corpus.csv"], tmp.path()));
    let delta = pooled["cliffs_delta"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&delta));
    assert!(pooled["u_statistic"].as_f64().unwrap() >= 0.0);

    let rows = stdout_json(&poolfit(&["effect", "--data", "sim/corpus.csv", "--per-project"], tmp.path()));
    assert!(!rows.as_array().unwrap().is_empty());
    assert!(rows[0].get("project").is_some());
}

#[test]
fn diagnose_exit_reflects_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    // 30 solid projects: converges, exit 0.
    let ok = poolfit(&["simulate", "--J", "30", "--seed", "1", "--out", "big"], tmp.path());
    assert!(ok.status.success());
    let diag = poolfit(&["diagnose", "--data", "big/corpus.csv"], tmp.path());
    assert_eq!(diag.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&diag.stderr));
    let json: serde_json::Value = serde_json::from_slice(&diag.stdout).unwrap();
    assert_eq!(json["converged"], true);

    // Six thin projects at this seed hit divergences: exit 3, still valid JSON.
    let small = poolfit(
        &["simulate", "--J", "6", "--files-min", "30", "--files-max", "120", "--seed", "1", "--out", "small"],
        tmp.path(),
    );
    assert!(small.status.success());
    let diag = poolfit(&["diagnose", "--data", "small/corpus.csv", "--seed", "3", "--effect"], tmp.path());
    assert_eq!(diag.status.code(), Some(3));
    let json: serde_json::Value = serde_json::from_slice(&diag.stdout).unwrap();
    assert_eq!(json["convergence"]["converged"], false);
    assert!(json["effect"]["cliffs_delta"].is_number());
}

#[test]
fn strict_fit_exits_three_on_non_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    let small = poolfit(
        &["simulate", "--J", "6", "--files-min", "30", "--files-max", "120", "--seed", "1", "--out", "small"],
        tmp.path(),
    );
    assert!(small.status.success());
    let fit = poolfit(
        &["fit", "--data", "small/corpus.csv", "--seed", "3", "--strict"],
        tmp.path(),
    );
    assert_eq!(fit.status.code(), Some(3));
}

#[test]
fn dump_draws_writes_the_draw_csv() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_small(tmp.path());
    let out = poolfit(
        &["fit", "--data", "sim/corpus.csv", "--model", "full", "--iters", "60", "--warmup", "30", "--dump-draws", "--out", "fit"],
        tmp.path(),
    );
    assert!(out.status.success());
    let draws = std::fs::read_to_string(tmp.path().join("fit/draws.csv")).unwrap();
    let mut lines = draws.lines();
    assert_eq!(lines.next(), Some("chain,draw,param,value"));
    // 2 chains x 30 kept draws x 4 columns (3 raw + sigma).
    assert_eq!(lines.count(), 2 * 30 * 4);
}

#[test]
fn exit_codes_for_usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let usage = poolfit(&["fit", "--bogus-flag"], tmp.path());
    assert_eq!(usage.status.code(), Some(1));

    let missing = poolfit(&["fit", "--data", "nope.csv"], tmp.path());
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.csv"));

    let malformed = tmp.path().join("bad.csv");
    std::fs::write(&malformed, "project,file,role,cbo\np1,A,controller,-3\n").unwrap();
    let bad = poolfit(&["fit", "--data", "bad.csv"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));

    let wrong_model = poolfit(&["thresholds", "--data", "bad.csv", "--model", "full"], tmp.path());
    assert_eq!(wrong_model.status.code(), Some(1));
}

#[test]
fn out_dir_from_environment_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_poolfit"))
        .args(["simulate", "--J", "3", "--files-min", "5", "--files-max", "10", "--seed", "2"])
        .current_dir(tmp.path())
        .env("POOLFIT_OUT", "from-env")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("from-env/corpus.csv").exists());
}

use std::path::Path;
use std::process::{Command, Output};

fn volrank(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_volrank"));
    cmd.args(args).env_remove("VOLRANK_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn simulate_writes_one_row_per_observation() {
    let dir = tempfile::tempdir().unwrap();
    let out = volrank(
        &["simulate", "--scenario", "constant_rank", "--d", "2", "--r", "1", "--n", "20000", "--format", "csv", "--out", s(dir.path())],
        &[],
    );
    let summary = json(&out);
    assert_eq!(summary["rows"], 20001);
    let text = std::fs::read_to_string(dir.path().join("constant_rank.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x_1,x_2"));
    assert_eq!(lines.count(), 20001);
}

#[test]
fn output_directory_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = volrank(
        &["simulate", "--scenario", "sde_case", "--d", "2", "--r", "2", "--n", "200", "--format", "csv"],
        &[("VOLRANK_OUT", dir.path())],
    );
    json(&out);
    assert!(dir.path().join("sde_case.csv").exists());
}

#[test]
fn short_path_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("short.csv");
    std::fs::write(&file, "t,x_1,x_2\n0,0,0\n0.1,1,2\n0.2,1,3\n").unwrap();
    let out = volrank(&["test-rank", "--path", s(&file)], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 5 are needed"));
}

#[test]
fn usage_and_config_errors_exit_with_code_two() {
    assert_eq!(volrank(&["frobnicate"], &[]).status.code(), Some(2));
    assert_eq!(volrank(&["oracle-det", "--bogus"], &[]).status.code(), Some(2));
    assert_eq!(volrank(&["simulate", "--scenario", "nonesuch", "--n", "10"], &[]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"scenario": {"name": "constant_rank", "d": 2, "q": 2, "r": 1}, "n_obs": 100, "n_paths": 2, "alphas": [1.5]}"#,
    )
    .unwrap();
    let out = volrank(&["mc-study", "--config", s(&cfg), "--out", s(dir.path())], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(volrank(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn binary_and_csv_files_give_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["simulate", "--scenario", "constant_rank", "--d", "2", "--r", "1", "--n", "2000", "--seed", "5"];
    let csv = dir.path().join("paths/a.csv");
    let bin = dir.path().join("paths/b.bin");
    json(&volrank(&[&base[..], &["--format", "csv", "--file", s(&csv)]].concat(), &[]));
    json(&volrank(&[&base[..], &["--format", "json", "--file", s(&bin)]].concat(), &[]));
    assert!(dir.path().join("paths/b.json").exists());

    let reports = json(&volrank(&["test-rank", "--path", s(&dir.path().join("paths")), "--hypotheses", "=1,<=2"], &[]));
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["r_hat"], reports[1]["r_hat"]);
    assert_eq!(reports[0]["decisions"].as_array().unwrap().len(), 2);

    let table = volrank(&["test-rank", "--path", s(&csv), "--hypotheses", "=1", "--format", "csv"], &[]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.starts_with("input,r_hat,r_rounded,v_feasible,reject =1\n"));
}

#[test]
fn const_rank_command_reports_a_decision() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.csv");
    json(&volrank(
        &["simulate", "--scenario", "constant_rank", "--d", "2", "--r", "1", "--n", "4000", "--format", "csv", "--file", s(&file)],
        &[],
    ));
    let rep = json(&volrank(&["test-const-rank", "--path", s(&file), "--k-n", "100"], &[]));
    assert_eq!(rep["k_n"], 100);
    assert!(rep["decision"]["reject"].is_boolean());
    let spot = volrank(&["test-const-rank", "--path", s(&file), "--k-n", "100", "--format", "csv"], &[]);
    let text = String::from_utf8(spot.stdout).unwrap();
    assert!(text.starts_with("i,t,r_hat_spot\n"));
    assert_eq!(text.lines().count(), 1 + 1000 - 100 + 1);
}

#[test]
fn gamma_mc_reads_limit_input() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("u.json");
    std::fs::write(&file, r#"{"alpha": [[0.8]], "beta": [[0.6]]}"#).unwrap();
    let est = json(&volrank(&["gamma-mc", "--input", s(&file), "--r", "1", "--samples", "2000", "--substeps", "128"], &[]));
    let g = est["gamma_r"].as_f64().unwrap();
    assert!((g - 0.64).abs() < 0.1, "{g}");
    assert_eq!(est["n_substeps"], 128);
}

#[test]
fn oracle_suite_passes() {
    let out = volrank(&["oracle-det", "--cases", "40"], &[]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn repeated_study_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.json");
    std::fs::write(
        &cfg,
        r#"{"scenario": {"name": "constant_rank", "d": 2, "q": 2, "r": 1}, "n_obs": 1000, "refine": 1,
            "n_paths": 10, "k_n": 40, "hypotheses": ["=1"]}"#,
    )
    .unwrap();
    let mut runs = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("run{k}"));
        let out = volrank(&["mc-study", "--config", s(&cfg), "--seed", "7", "--out", s(&out_dir)], &[]);
        assert!(out.status.success());
        runs.push(std::fs::read(out_dir.join("study.json")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
}

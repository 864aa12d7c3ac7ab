use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn prodist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prodist")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn trace_rows(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

const P0_CONFIG: &str = r#"{
    "problem": {"table": {"move_counts": [2, 2], "values": [0, 1, 1, 2]}},
    "algorithm": "gradient",
    "schedule": {"beta0": 1.0, "rounds": 3, "inner_steps": 50}
}"#;

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "p0.json", P0_CONFIG);
    let out = dir.path().join("out");
    let result = prodist(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));

    let rows = trace_rows(&out.join("trace.jsonl"));
    assert!(rows.len() > 3);
    for key in ["round", "step", "beta", "lagrangian", "expected_g", "entropy", "best_g"] {
        assert!(rows.iter().all(|r| r.get(key).is_some()), "missing {key}");
    }
    assert_eq!((rows[0]["round"].as_u64(), rows[0]["step"].as_u64()), (Some(0), Some(0)));

    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["best_x"], serde_json::json!([0, 0]));
    assert_eq!(summary["best_g"], 0.0);
    assert_eq!(summary["final_q"].as_array().unwrap().len(), 2);
    assert!(summary["seconds"].as_f64().unwrap() >= 0.0);

    // The summary is also echoed on stdout.
    let echoed: Value = serde_json::from_slice(&result.stdout).unwrap();
    assert_eq!(echoed["best_g"], 0.0);
}

#[test]
fn best_g_never_rises_and_beta_never_falls() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "mc.json",
        r#"{
            "problem": {"generator": {"name": "random-table", "agents": 3, "moves": 4, "seed": 2}},
            "algorithm": "brouwer",
            "expectation": "monte-carlo",
            "schedule": {"rounds": 5, "inner_steps": 10}
        }"#,
    );
    let out = dir.path().join("out");
    assert!(prodist(&["run", "--config", &config, "--out", out.to_str().unwrap()]).status.success());
    let rows = trace_rows(&out.join("trace.jsonl"));
    for pair in rows.windows(2) {
        assert!(pair[1]["best_g"].as_f64() <= pair[0]["best_g"].as_f64());
        assert!(pair[1]["beta"].as_f64() >= pair[0]["beta"].as_f64());
    }
}

#[test]
fn file_problems_resolve_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("tables")).unwrap();
    write(&dir.path().join("tables"), "p0.json", r#"{"move_counts": [2, 2], "values": [3, 1, 1, 2]}"#);
    let config = write(
        dir.path(),
        "c.json",
        r#"{"problem": {"file": "tables/p0.json"}, "algorithm": "nearest-newton", "schedule": {"rounds": 2}}"#,
    );
    let result = prodist(&["oracle", "--config", &config]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let report: Value = serde_json::from_slice(&result.stdout).unwrap();
    assert_eq!(report["best_x"], serde_json::json!([0, 1]));
    assert_eq!(report["best_g"], 1.0);
    assert_eq!(report["joint_size"], "4");
    assert_eq!(report["canonical"].as_array().unwrap().len(), 2);
    assert_eq!(report["uniform_expected_g"], 1.75);
}

#[test]
fn oracle_reports_canonical_marginals() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "p0.json", P0_CONFIG);
    let report: Value = serde_json::from_slice(&prodist(&["oracle", "--config", &config]).stdout).unwrap();
    let first = &report["canonical"][0];
    assert_eq!(first["beta"], 1.0);
    let e = (-1f64).exp();
    let m = first["marginals"][0][0].as_f64().unwrap();
    assert!((m - 1.0 / (1.0 + e)).abs() < 1e-12);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "c.json",
        r#"{"problem": {"generator": {"name": "random-table", "agents": 2, "moves": 3}},
            "algorithm": "gradient", "expectation": "monte-carlo", "seed": 1,
            "schedule": {"rounds": 2, "inner_steps": 5}}"#,
    );
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        assert!(prodist(&["run", "--config", &config, "--seed", seed, "--out", out.to_str().unwrap()]).status.success());
        std::fs::read(out.join("trace.jsonl")).unwrap()
    };
    assert_eq!(run("9", "a"), run("9", "b"));
    assert_ne!(run("9", "a"), run("10", "c"));
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "u.json", r#"{"problem": {"table": {"move_counts": [2], "values": [0, 1]}}, "algorithm": "gradient", "colour": 1}"#);
    let result = prodist(&["run", "--config", &unknown, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("colour"));

    let missing = prodist(&["oracle", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let suite = prodist(&["bench", "--suite", "nope"]);
    assert!(!suite.status.success());
}

#[test]
fn bench_suite_prints_json_lines() {
    let result = prodist(&["bench", "--suite", "aging"]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let text = String::from_utf8(result.stdout).unwrap();
    assert!(text.lines().count() > 0);
    for line in text.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
}

use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn cometh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cometh")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn fixture() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scenarios_300.json").display().to_string()
}

#[test]
fn synth_gen_then_gridsearch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bench.json");
    let out = cometh(&["synth-gen", "--out", data.to_str().unwrap(), "--per-canonical", "4", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let samples: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(&data).unwrap()).unwrap();
    assert_eq!(samples.len(), 20);

    let grid = tmp.path().join("grid.json");
    let spec = json!({
        "delta_add_values": [0.05, 0.12],
        "delta_merge_values": [0.01, 0.03],
        "repeats": 2,
        "benchmark": {"per_canonical": 10, "sample_size": 500, "noise": 0.0, "seed": 0},
    });
    fs::write(&grid, spec.to_string()).unwrap();
    let dir = tmp.path().join("grid");
    let out = cometh(&["gridsearch", "--grid", grid.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--serial"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("4 cells"));
    assert!(dir.join("summary.json").is_file());
    assert!(dir.join("raw.jsonl").is_file());
}

#[test]
fn pipeline_then_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    let config = json!({
        "dataset": fixture(),
        "seed": 7,
        "features": {"templates": ["FeatExtract1"]},
    });
    fs::write(&cfg, config.to_string()).unwrap();
    let run = tmp.path().join("run");
    let run = run.to_str().unwrap();

    let out = cometh(&["pipeline", "--run-dir", run, "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("evaluate: done"));

    let out = cometh(&["pipeline", "--run-dir", run]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("up to date").count(), 5);

    let out = cometh(&["trace", "s050", "--run-dir", run, "--json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let t: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(t["assigned_context"], t["nearest_context"]);

    let out = cometh(&["trace", "missing", "--run-dir", run]);
    assert_eq!(code(&out), 3);
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, json!({"dataset": fixture(), "seed": 1, "learner": {"delta_add": -1.0}}).to_string()).unwrap();
    let run = tmp.path().join("run");
    let out = cometh(&["learn", "--run-dir", run.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    let out = cometh(&["learn", "--run-dir", tmp.path().join("fresh").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_stage_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, json!({"dataset": fixture(), "seed": 1}).to_string()).unwrap();
    let run = tmp.path().join("run");
    let out = cometh(&["train", "--run-dir", run.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreachable_backend_exits_4() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    let config = json!({
        "dataset": fixture(),
        "seed": 1,
        "gateway": {
            "backend": "remote",
            "endpoint_url": format!("http://127.0.0.1:{port}/v1/chat/completions"),
            "model_name": "m",
            "max_retries": 0,
        },
        "baseline": {"templates": ["Judge1"]},
    });
    fs::write(&cfg, config.to_string()).unwrap();
    let run = tmp.path().join("run");
    let out = cometh(&["baseline", "--run-dir", run.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreadable_input_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cometh(&[
        "gridsearch",
        "--grid",
        tmp.path().join("absent.json").to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
}

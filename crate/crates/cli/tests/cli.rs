//! End-to-end CLI runs: scripted backend, mock tool fixtures, offline.

use std::path::Path;
use std::process::Command;

use research_core::model::{Action, RoundResponse};
use research_core::protocol::emit_round_response;
use research_core::tools::{write_fixture, SearchResult};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_research"))
}

/// Writes replies.jsonl, fixtures/, config.toml, and dataset.jsonl under
/// `dir`.
fn write_workspace(dir: &Path) {
    let tool_call = emit_round_response(&RoundResponse {
        think: "need a source".into(),
        report: "looking for the answer".into(),
        action: Action::tool_call("search", serde_json::json!({"queries": ["six times seven"]})),
    });
    let answer = emit_round_response(&RoundResponse {
        think: "arithmetic confirmed".into(),
        report: "six times seven is 42 per the search result".into(),
        action: Action::final_answer("42"),
    });
    let replies = [tool_call, answer]
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(dir.join("replies.jsonl"), replies).unwrap();

    write_fixture(
        &dir.join("fixtures"),
        "search",
        "six times seven",
        &vec![SearchResult {
            title: "Multiplication".into(),
            snippet: "6 x 7 = 42".into(),
            url: "https://example.com/42".into(),
        }],
    )
    .unwrap();

    std::fs::write(
        dir.join("config.toml"),
        format!(
            r#"
[backend]
kind = "scripted"
replies_path = "{replies}"
endpoint_url = "http://unused.localhost"
model_name = "scripted"
request_timeout_ms = 1000
max_retries = 0

[transport]
kind = "mock"
fixture_dir = "{fixtures}"

[harness]
permits = 1
synthesis_permits = 1
count_forced_final = true
strict_exact = true
"#,
            replies = dir.join("replies.jsonl").display(),
            fixtures = dir.join("fixtures").display(),
        ),
    )
    .unwrap();

    std::fs::write(
        dir.join("dataset.jsonl"),
        r#"{"id": "d1", "question": "What is six times seven?", "answer": "42"}"#,
    )
    .unwrap();
}

#[test]
fn run_prints_final_answer() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    let output = binary()
        .args([
            "run",
            "--question",
            "What is six times seven?",
            "--config",
            dir.path().join("config.toml").to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(String::from_utf8_lossy(&output.stdout).trim(), "42");
    assert!(dir.path().join("out/trajectories.jsonl").exists());
}

#[test]
fn bench_then_corpus_then_stats_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    let config = dir.path().join("config.toml");
    let out = dir.path().join("bench-out");

    let output = binary()
        .args([
            "bench",
            "--dataset",
            dir.path().join("dataset.jsonl").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("report JSON on stdout");
    assert_eq!(report["pass_at_1"], 1.0);
    assert_eq!(report["per_item"][0]["id"], "d1");
    assert!(out.join("report.json").exists());

    let samples_path = dir.path().join("samples.jsonl");
    let output = binary()
        .args([
            "corpus",
            "build",
            "--trajectories",
            out.join("trajectories.jsonl").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--dp-size",
            "2",
            "--out",
            samples_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stats: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(stats["total_samples"], 2);
    assert_eq!(stats["retained_samples"], 2);
    let samples = std::fs::read_to_string(&samples_path).unwrap();
    assert_eq!(samples.lines().count(), 2);

    let output = binary()
        .args([
            "stats",
            "--trajectories",
            out.join("trajectories.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(stats["avg_turns"], 2.0);
    assert_eq!(stats["tool_frequency"]["search"], 100.0);
}

#[test]
fn bad_mode_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    let output = binary()
        .args([
            "bench",
            "--dataset",
            dir.path().join("dataset.jsonl").to_str().unwrap(),
            "--mode",
            "bogus",
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown mode"));
}

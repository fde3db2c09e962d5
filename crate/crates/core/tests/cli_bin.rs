//! Exercises the installed binary: flags, exit codes, and the line-oriented
//! streaming mode.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use duplexflat::jsonl::write_jsonl;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_duplexflat");

fn bin() -> Command {
    Command::new(BIN)
}

fn write_corpus(path: &Path, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let scripts = common::random_corpus(&mut rng, n, |_| 1);
    write_jsonl(path, &scripts).unwrap();
}

#[test]
fn help_exits_zero_and_bad_flag_exits_one() {
    let ok = bin().arg("--help").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = bin().arg("--no-such-flag").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let bad_sub = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(bad_sub.status.code(), Some(1));
}

#[test]
fn malformed_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, "this is not json\n").unwrap();
    let out = bin()
        .args(["filter", "--input"])
        .arg(&input)
        .arg("--output")
        .arg(dir.path().join("out.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 1"), "stderr: {stderr}");
}

#[test]
fn judge_eval_without_endpoint_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = bin()
        .args(["eval", "--which", "judge", "--pred"])
        .arg(&empty)
        .arg("--truth")
        .arg(&empty)
        .env_remove("JUDGE_ENDPOINT")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn pipeline_via_binary() {
    let dir = tempfile::tempdir().unwrap();
    let scripts = dir.path().join("scripts.jsonl");
    write_corpus(&scripts, 8);

    let accepted = dir.path().join("accepted.jsonl");
    let out = bin()
        .args(["filter", "--input"])
        .arg(&scripts)
        .arg("--output")
        .arg(&accepted)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"accepted\":8"), "stdout: {stdout}");
    // Resolved config echoed for provenance.
    assert!(String::from_utf8_lossy(&out.stderr).contains("resolved config"));

    let timelines = dir.path().join("timelines.jsonl");
    let out = bin()
        .args(["simulate", "--seed", "3", "--input"])
        .arg(&accepted)
        .arg("--output")
        .arg(&timelines)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let samples = dir.path().join("samples.jsonl");
    let out = bin()
        .args(["flatten", "--format", "3stream", "--input"])
        .arg(&timelines)
        .arg("--output")
        .arg(&samples)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let model = dir.path().join("model.json");
    let out = bin()
        .args(["train", "--input"])
        .arg(&samples)
        .arg("--output")
        .arg(&model)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let pred = dir.path().join("pred.jsonl");
    let out = bin()
        .args(["infer", "--seed", "11", "--model"])
        .arg(&model)
        .arg("--input")
        .arg(&timelines)
        .arg("--output")
        .arg(&pred)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let report_path = dir.path().join("report.json");
    let out = bin()
        .args(["eval", "--which", "turntaking", "--pred"])
        .arg(&pred)
        .arg("--truth")
        .arg(&timelines)
        .arg("--output")
        .arg(&report_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["assistant"]["n_events"].as_u64().unwrap() >= 8);
}

#[test]
fn stream_mode_round_trip_and_violation() {
    let dir = tempfile::tempdir().unwrap();
    let scripts = dir.path().join("scripts.jsonl");
    write_corpus(&scripts, 4);
    let timelines = dir.path().join("timelines.jsonl");
    assert!(bin()
        .args(["simulate", "--seed", "1", "--input"])
        .arg(&scripts)
        .arg("--output")
        .arg(&timelines)
        .status()
        .unwrap()
        .success());
    let samples = dir.path().join("samples.jsonl");
    assert!(bin()
        .args(["flatten", "--format", "3stream", "--input"])
        .arg(&timelines)
        .arg("--output")
        .arg(&samples)
        .status()
        .unwrap()
        .success());
    let model = dir.path().join("model.json");
    assert!(bin()
        .args(["train", "--input"])
        .arg(&samples)
        .arg("--output")
        .arg(&model)
        .status()
        .unwrap()
        .success());

    // Default layout: SILENT_SPEECH is text (256) + speech (4096) + index 7.
    let silent = 256 + 4096 + 7;
    let chunk = vec![silent.to_string(); 10].join(" ");
    let mut child = bin()
        .args(["infer", "--stream", "--model"])
        .arg(&model)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all(format!("{chunk}\n{chunk}\n").as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("TXT: ") && lines[1].starts_with("SPH: "));

    // Short chunk violates the schedule: nonzero exit.
    let mut child = bin()
        .args(["infer", "--stream", "--model"])
        .arg(&model)
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.as_mut().unwrap().write_all(b"1 2 3\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

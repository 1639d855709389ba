use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pairact(root: &Path, args: &[&str]) -> Output {
    let dir = |name: &str| root.join(name).to_string_lossy().into_owned();
    Command::new(env!("CARGO_BIN_EXE_pairact"))
        .args(args)
        .args(["--raw-dir", &dir("raw"), "--datasets-dir", &dir("datasets")])
        .args(["--checkpoints-dir", &dir("checkpoints"), "--reports-dir", &dir("reports")])
        .env("PAIRACT_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// The single machine-readable error line on stderr.
fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with('{')).collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    let v: Value = serde_json::from_str(lines[0]).expect("error line is JSON");
    assert_eq!(Some(v["code"].as_i64().unwrap() as i32), out.status.code());
    v
}

const SMALL: [&str; 4] = ["--window-length", "30", "--window-stride", "15"];

fn prepare(root: &Path) {
    let mut gen = vec!["gen-synthetic", "--subjects", "3", "--frames", "60"];
    gen.extend(SMALL);
    stdout_json(&pairact(root, &gen));
    stdout_json(&pairact(root, &[&["preprocess"][..], &SMALL].concat()));
    stdout_json(&pairact(root, &[&["synthesize"][..], &SMALL].concat()));
}

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = pairact(dir.path(), &["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-synthetic"));
}

#[test]
fn usage_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["train", "lstm"], &["train", "cnn", "--data", "pair"]] {
        let out = pairact(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(error_line(&out)["error"], "config");
    }
}

#[test]
fn unreadable_or_invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = pairact(dir.path(), &["--config", missing.to_str().unwrap(), "report"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seeed": 1}"#).unwrap();
    let out = pairact(dir.path(), &["--config", bad.to_str().unwrap(), "report"]);
    assert_eq!(error_line(&out)["error"], "config");
}

#[test]
fn missing_data_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = pairact(dir.path(), &["preprocess"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "data");
}

#[test]
fn evaluate_before_train_names_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    let out = pairact(dir.path(), &[&["evaluate", "loso", "--model", "lstm", "--data", "grouped"][..], &SMALL].concat());
    assert_eq!(out.status.code(), Some(3));
    let msg = error_line(&out)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("missing checkpoint"), "{msg}");
    assert!(msg.contains("fold_01_S01.ckpt"), "{msg}");
    assert!(msg.contains("pairact train lstm --data grouped"), "{msg}");
}

#[test]
fn malformed_line_is_reported_with_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    fs::create_dir_all(&raw).unwrap();
    fs::write(raw.join("broken.ndjson"), "\n{\"subject\": \"S1\", \"timestamp_ns\": oops}\n").unwrap();
    let out = pairact(dir.path(), &["preprocess"]);
    assert_eq!(out.status.code(), Some(3));
    let msg = error_line(&out)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("broken.ndjson:2:"), "{msg}");
}

#[test]
fn short_recording_yields_no_windows() {
    let dir = tempfile::tempdir().unwrap();
    stdout_json(&pairact(dir.path(), &["gen-synthetic", "--subjects", "2", "--frames", "130"]));
    // trim one recording to 129 frames
    let path = dir.path().join("raw").join("S01_W_01.ndjson");
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().take(129).collect();
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = pairact(dir.path(), &["preprocess"]);
    let summary = stdout_json(&out);
    let rec = summary["recordings"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["file"].as_str().unwrap().ends_with("S01_W_01.ndjson"))
        .unwrap();
    assert_eq!(rec["frames_read"], 129);
    assert_eq!(rec["windows_cut"], 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("fewer than the window length"));
}

#[test]
fn synthesize_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    prepare(a.path());
    prepare(b.path());
    let sa = stdout_json(&pairact(a.path(), &[&["synthesize"][..], &SMALL].concat()));
    let sb = stdout_json(&pairact(b.path(), &[&["synthesize"][..], &SMALL].concat()));
    assert_eq!(sa["dataset"]["checksum"], sb["dataset"]["checksum"]);
    assert_eq!(sa["dataset"]["samples"], 6 * 81);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"synthetic": {"subjects": 2, "frames": 60}}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    stdout_json(&pairact(dir.path(), &["--config", cfg, "gen-synthetic", "--window-length", "30"]));
    // the default window length is longer than the recordings
    let plain = stdout_json(&pairact(dir.path(), &["--config", cfg, "preprocess"]));
    assert_eq!(plain["single"]["windows"], 0);
    let over = stdout_json(&pairact(dir.path(), &["--config", cfg, "preprocess", "--window-length", "30"]));
    // 2 subjects × 3 states × 2 windows at the default stride
    assert_eq!(over["single"]["windows"], 2 * 3 * 2);
}

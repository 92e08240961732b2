use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn atba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atba")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn stderr_json(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).expect("JSON error on stderr")
}

fn write_spec(dir: &Path, body: &str) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, body).unwrap();
    spec
}

const CLEAN_SPEC: &str =
    r#"{"format_version": 1, "seed": 5, "videos": 6, "frames": [300, 500], "actions": [2, 5], "classes": 9}"#;

#[test]
fn noise_free_corpus_aligns_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), CLEAN_SPEC);
    let corpus = dir.path().join("corpus");
    let pred = dir.path().join("pred");
    stdout_json(&atba(&["--format", "json", "generate", "--spec", path(&spec), "--out", path(&corpus)]));
    let manifest = corpus.join("manifest.json");
    let report = stdout_json(&atba(&["--format", "json", "align", "--corpus", path(&manifest), "--out", path(&pred)]));
    assert_eq!(report["metrics"]["pl_frame_weighted"], 100.0);
    assert_eq!(report["failed"].as_array().unwrap().len(), 0);
    assert!(pred.join("report.json").exists());

    let eval = stdout_json(&atba(&[
        "--format",
        "json",
        "evaluate",
        "--pred",
        path(&pred),
        "--truth",
        path(&corpus.join("truth")),
    ]));
    assert_eq!(eval["corpus"]["mof"], 100.0);
    assert_eq!(eval["corpus"]["iou"], 100.0);
    assert_eq!(eval["videos"].as_array().unwrap().len(), 6);
}

#[test]
fn generation_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), CLEAN_SPEC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(atba(&["--threads", "1", "generate", "--spec", path(&spec), "--out", path(&a)]).status.success());
    assert!(atba(&["--threads", "3", "generate", "--spec", path(&spec), "--out", path(&b)]).status.success());
    for file in ["manifest.json", "video_00003.probs", "video_00003.embeddings.json", "truth/video_00002.labels.json"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let c = dir.path().join("c");
    assert!(atba(&["--seed", "6", "generate", "--spec", path(&spec), "--out", path(&c)]).status.success());
    assert_ne!(
        std::fs::read(a.join("video_00000.probs")).unwrap(),
        std::fs::read(c.join("video_00000.probs")).unwrap()
    );
}

#[test]
fn evaluate_lists_missing_ids() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), CLEAN_SPEC);
    let corpus = dir.path().join("corpus");
    let pred = dir.path().join("pred");
    atba(&["generate", "--spec", path(&spec), "--out", path(&corpus)]);
    atba(&["align", "--corpus", path(&corpus.join("manifest.json")), "--out", path(&pred)]);
    std::fs::remove_file(pred.join("video_00004.labels.json")).unwrap();
    let err = stderr_json(&atba(&["evaluate", "--pred", path(&pred), "--truth", path(&corpus.join("truth"))]));
    assert!(err["error"]["message"].as_str().unwrap().contains("video_00004"), "{err}");
}

#[test]
fn per_video_failures_reported() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), CLEAN_SPEC);
    let corpus = dir.path().join("corpus");
    let pred = dir.path().join("pred");
    atba(&["generate", "--spec", path(&spec), "--out", path(&corpus)]);
    let probs = corpus.join("video_00002.probs");
    let bytes = std::fs::read(&probs).unwrap();
    std::fs::write(&probs, &bytes[..bytes.len() - 5]).unwrap();
    let out =
        atba(&["--format", "json", "align", "--corpus", path(&corpus.join("manifest.json")), "--out", path(&pred)]);
    assert!(!out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let failed = report["failed"].as_array().unwrap();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["id"], "video_00002");
    assert_eq!(failed[0]["kind"], "format");
    assert!(failed[0]["error"].as_str().unwrap().contains("truncated payload"));
    assert_eq!(report["per_video"].as_array().unwrap().len(), 5);
    assert!(stderr_json(&out)["error"]["message"].as_str().unwrap().contains("1 of 6"));
}

#[test]
fn single_video_align_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), CLEAN_SPEC);
    let corpus = dir.path().join("corpus");
    atba(&["generate", "--spec", path(&spec), "--out", path(&corpus)]);
    let probs = corpus.join("video_00001.probs");
    let transcript = corpus.join("video_00001.transcript.json");
    let truth: Value =
        serde_json::from_slice(&std::fs::read(corpus.join("truth/video_00001.labels.json")).unwrap()).unwrap();

    for extra in [
        &[][..],
        &["--baseline", "class-agnostic"],
        &["--baseline", "viterbi-oracle"],
        &["--fusion", "transition-only"],
    ] {
        let mut args = vec!["--format", "json", "align", "--probs", path(&probs), "--transcript", path(&transcript)];
        args.extend_from_slice(extra);
        let doc = stdout_json(&atba(&args));
        assert_eq!(doc["labels"], truth["labels"], "{extra:?}");
    }

    let out = dir.path().join("labels.json");
    atba(&["align", "--probs", path(&probs), "--transcript", path(&transcript), "--out", path(&out)]);
    let written: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(written["labels"], truth["labels"]);

    let scores = atba(&["score", "--probs", path(&probs)]);
    let frames = truth["labels"].as_array().unwrap().len();
    assert_eq!(String::from_utf8(scores.stdout).unwrap().lines().count(), frames);
}

#[test]
fn malformed_inputs_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.json");
    std::fs::write(&transcript, r#"{"format_version": 2, "video_id": "v", "actions": [1, 2]}"#).unwrap();
    let probs = dir.path().join("p.txt");
    std::fs::write(&probs, "0.5 0.5\n0.25 0.75\n0.5 0.5\n").unwrap();
    let err = stderr_json(&atba(&["align", "--probs", path(&probs), "--transcript", path(&transcript)]));
    assert_eq!(err["error"]["kind"], "unsupported_version");
    assert_eq!(err["error"]["path"], path(&transcript));

    std::fs::write(&transcript, r#"{"format_version": 1, "video_id": "v", "actions": [1, 1]}"#).unwrap();
    let err = stderr_json(&atba(&["align", "--probs", path(&probs), "--transcript", path(&transcript)]));
    assert_eq!(err["error"]["kind"], "schema");
    assert!(err["error"]["message"].as_str().unwrap().contains("actions"));

    std::fs::write(&probs, "0.5 0.5\n0.25 0.7\n").unwrap();
    let err = stderr_json(&atba(&["score", "--probs", path(&probs)]));
    assert_eq!(err["error"]["kind"], "invalid_sequence");

    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"format_version": 1, "boundary_window": 6}"#).unwrap();
    let err = stderr_json(&atba(&["score", "--probs", path(&probs), "--config", path(&config)]));
    assert_eq!(err["error"]["path"], path(&config));
}

#[test]
fn bench_suites_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scaling.json");
    let report = stdout_json(&atba(&[
        "--format",
        "json",
        "bench",
        "--suite",
        "alignment-scaling",
        "--frames",
        "1000,3000",
        "--out",
        path(&out),
    ]));
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert_eq!(report["rows"][0]["candidates"], 40);
    assert_eq!(serde_json::from_slice::<Value>(&std::fs::read(&out).unwrap()).unwrap(), report);

    let eq = stdout_json(&atba(&[
        "--format",
        "json",
        "--seed",
        "4",
        "bench",
        "--suite",
        "oracle-equivalence",
        "--instances",
        "300",
    ]));
    assert_eq!(eq["instances"], 300);
    assert_eq!(eq["cost_mismatches"], 0);
    assert_eq!(eq["matching_mismatches"], 0);
}

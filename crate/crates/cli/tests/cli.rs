use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn noisyir(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisyir"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn error_json(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    let line = line.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {line}"))
}

/// A small synthetic workspace with every stage already run.
fn staged() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = noisyir(&["synth", "--dest", ".", "--n-docs", "120", "--dim", "12"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = noisyir(&["--config", "config.json", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn usage_errors_exit_2_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = noisyir(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["code"], 2);
    assert_eq!(err["error"], "usage");

    fs::write(dir.path().join("c.json"), r#"{"bootstrap_b": 5}"#).unwrap();
    let out = noisyir(&["--config", "c.json", "idf"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("bootstrap_b"));

    let out = noisyir(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"metadata": "absent.jsonl"}"#).unwrap();
    let out = noisyir(&["--config", "c.json", "idf"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "input");
}

#[test]
fn staged_pipeline_writes_every_artifact() {
    let dir = staged();
    let out = dir.path().join("out");
    for f in [
        "idf.csv",
        "queries.csv",
        "drift/stats.csv",
        "drift/scenarios.md",
        "index/low_noise.ngem",
        "runs/high_noise.jsonl",
        "reports/low_noise.metrics.json",
        "comparison.md",
        "tables/k10_tau0.2.md",
        "tables/k10_pairs.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(out.join("reports/low_noise.metrics.json.manifest.json").exists());
    let comparison = fs::read_to_string(out.join("comparison.md")).unwrap();
    assert!(comparison.contains("low_noise – high_noise"), "{comparison}");
}

#[test]
fn unknown_document_in_run_names_the_id() {
    let dir = staged();
    fs::write(
        dir.path().join("external.jsonl"),
        "{\"query\":\"doc-0003\",\"neighbors\":[{\"id\":\"ghost-doc\",\"score\":0.5}]}\n",
    )
    .unwrap();
    let out = noisyir(&["--config", "config.json", "eval", "--run", "external.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("ghost-doc"));
}

#[test]
fn changed_corpus_or_config_is_refused() {
    let dir = staged();
    let meta = dir.path().join("metadata.jsonl");
    let original = fs::read_to_string(&meta).unwrap();
    let edited = original.replacen("\"keywords\":[", "\"keywords\":[\"added term\",", 1);
    assert_ne!(edited, original);
    fs::write(&meta, edited).unwrap();
    let out = noisyir(&["--config", "config.json", "eval"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"], "integrity");

    fs::write(&meta, original).unwrap();
    let out = noisyir(&["--config", "config.json", "--seed-sampling", "99", "compare"], dir.path());
    assert_eq!(out.status.code(), Some(4));

    // the bootstrap seed is not part of the snapshot
    let out = noisyir(&["--config", "config.json", "--seed-bootstrap", "99", "compare"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn tampered_artifact_is_refused() {
    let dir = staged();
    let report = dir.path().join("out/reports/high_noise.metrics.json");
    let mut text = fs::read_to_string(&report).unwrap();
    text.push(' ');
    fs::write(&report, text).unwrap();
    let out = noisyir(&["--config", "config.json", "compare"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("checksum"));
}

#[test]
fn zero_head_attention_pooling_equals_mean_pooling() {
    let dir = staged();
    let pool = |mode: &str, name: &str| {
        let mut args = vec![
            "--config",
            "config.json",
            "pool",
            "--hidden-states",
            "hidden_states.bin",
            "--layout",
            "hidden_states.layout.json",
            "--mode",
            mode,
            "--name",
            name,
        ];
        if mode == "attention" {
            args.extend(["--head", "head.json"]);
        }
        let out = noisyir(&args, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.path().join(format!("out/embeddings/{name}.ngem"))).unwrap()
    };
    assert_eq!(pool("mean", "m"), pool("attention", "a"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = staged();
    let out = dir.path().join("out");
    let before = fs::read(out.join("comparison.json")).unwrap();
    let metrics = fs::read(out.join("reports/low_noise.metrics.json")).unwrap();
    let rerun = noisyir(&["--config", "config.json", "--threads", "1", "run"], dir.path());
    assert!(rerun.status.success());
    assert_eq!(fs::read(out.join("comparison.json")).unwrap(), before);
    assert_eq!(fs::read(out.join("reports/low_noise.metrics.json")).unwrap(), metrics);
}

//! End-to-end runs of the command-line binary: synth → preprocess →
//! train → generate → eval → diagnose on a tiny corpus, plus exit-code
//! and idempotence contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_backparse")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env("BACKPARSE_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
  "layers": 1, "d": 16, "heads": 2, "d_r": 4, "d_biaff": 8, "ffn": 24,
  "attention_dropout": 0.1, "residual_dropout": 0.1,
  "max_steps": 20, "batch_tokens": 64, "eval_every": 10, "log_every": 5,
  "warmup": 10, "lr_factor": 1.0, "beam": 2, "seed": 5,
  "work_dir": "run", "train_path": "data/train.jsonl",
  "dev_path": "data/dev.jsonl", "test_path": "data/test.jsonl",
  "synth": {"n_examples": 12, "n_dev": 4, "n_test": 6,
            "min_nodes": 3, "max_nodes": 5, "reentrance_prob": 0.3, "seed": 1}
}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn full_workflow_runs_and_artifacts_appear() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);

    assert_ok(&run_in(d, &["synth", "--config", "cfg.json"]), "synth");
    for split in ["train", "dev", "test"] {
        assert!(d.join(format!("data/{split}.jsonl")).exists(), "{split} written");
    }

    // synth is deterministic: rerun reproduces the corpus byte for byte
    let first = std::fs::read(d.join("data/train.jsonl")).unwrap();
    assert_ok(&run_in(d, &["synth", "--config", "cfg.json"]), "synth rerun");
    assert_eq!(first, std::fs::read(d.join("data/train.jsonl")).unwrap());

    assert_ok(
        &run_in(d, &["preprocess", "--config", "cfg.json", "--out", "data/train.norm.jsonl"]),
        "preprocess",
    );
    let norm1 = std::fs::read(d.join("data/train.norm.jsonl")).unwrap();
    let vocab1 = std::fs::read(d.join("run/vocab/words.txt")).unwrap();
    assert_ok(
        &run_in(d, &["preprocess", "--config", "cfg.json", "--out", "data/train.norm.jsonl"]),
        "preprocess rerun",
    );
    assert_eq!(norm1, std::fs::read(d.join("data/train.norm.jsonl")).unwrap(), "idempotent output");
    assert_eq!(vocab1, std::fs::read(d.join("run/vocab/words.txt")).unwrap(), "idempotent vocab");

    assert_ok(&run_in(d, &["train", "--config", "cfg.json"]), "train");
    assert!(d.join("run/model.ckpt").exists(), "checkpoint written");
    assert!(d.join("run/metrics.jsonl").exists(), "metrics written");
    assert!(d.join("run/config.effective.json").exists(), "effective config dumped");

    assert_ok(
        &run_in(d, &["generate", "--config", "cfg.json", "--input", "data/test.jsonl", "--out", "hyp.txt"]),
        "generate",
    );
    let hyp = std::fs::read_to_string(d.join("hyp.txt")).unwrap();
    assert_eq!(hyp.lines().count(), 6, "one line per test graph");

    let diag = run_in(
        d,
        &["diagnose", "--config", "cfg.json", "--out", "diag.jsonl", "--export-attention", "attn.json"],
    );
    assert_ok(&diag, "diagnose");
    let report = std::fs::read_to_string(d.join("diag.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 6);
    for line in report.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["id", "n_nodes", "node_acc", "edge_acc", "bleu"] {
            assert!(v.get(key).is_some(), "diagnostic line missing {key}");
        }
    }
    let stdout = String::from_utf8_lossy(&diag.stdout);
    assert!(stdout.contains("graph-size buckets"), "bucket table printed");
    assert!(stdout.contains("pearson"), "correlations printed");
    let attn: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("attn.json")).unwrap()).unwrap();
    assert!(attn.get("matrix").is_some() && attn.get("tokens").is_some() && attn.get("concepts").is_some());
}

#[test]
fn eval_identical_files_prints_bleu_100() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("a.txt"), "the cat sat on the mat\na quick brown fox jumps\n").unwrap();
    let out = run_in(d, &["eval", "a.txt", "a.txt"]);
    assert_ok(&out, "eval");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "BLEU = 100.00");
}

#[test]
fn empty_preprocess_input_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);
    std::fs::create_dir_all(d.join("data")).unwrap();
    std::fs::write(d.join("data/train.jsonl"), "").unwrap();
    let out = run_in(d, &["preprocess", "--config", "cfg.json", "--out", "data/empty.norm.jsonl"]);
    assert_ok(&out, "preprocess on empty input");
    assert_eq!(std::fs::read_to_string(d.join("data/empty.norm.jsonl")).unwrap(), "");
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // unknown config key → config error (2)
    std::fs::write(d.join("bad.json"), r#"{"no_such_key": 1}"#).unwrap();
    let out = run_in(d, &["train", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // invalid value via override → config error (2)
    let out = run_in(d, &["train", "--set", "beam=0"]);
    assert_eq!(out.status.code(), Some(2));

    // missing training data → data error (3)
    write_config(d);
    let out = run_in(d, &["train", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // malformed JSONL line → data error (3) with a line number
    std::fs::create_dir_all(d.join("data")).unwrap();
    std::fs::write(d.join("data/train.jsonl"), "{not json}\n").unwrap();
    let out = run_in(d, &["preprocess", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("line 1"),
        "parse errors cite line numbers: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // generate without a checkpoint → data error (3)
    let out = run_in(d, &["synth", "--config", "cfg.json"]);
    assert_ok(&out, "synth");
    let out = run_in(d, &["generate", "--config", "cfg.json", "--input", "data/test.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn penman_ingestion_preprocesses_the_reference_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);
    std::fs::write(
        d.join("g.penman"),
        "(p / possible-01 :ARG1 (h / help-01 :ARG0 (p2 / police) :ARG1 (v / victim)))\n",
    )
    .unwrap();
    std::fs::write(d.join("s.txt"), "the police could help the victim\n").unwrap();
    std::fs::write(d.join("a.txt"), "2-2 3-0 4-1 6-3\n").unwrap();
    let out = run_in(
        d,
        &[
            "preprocess", "--config", "cfg.json",
            "--graphs", "g.penman", "--sentences", "s.txt", "--alignments", "a.txt",
            "--out", "fixture.jsonl",
        ],
    );
    assert_ok(&out, "penman preprocess");
    let line = std::fs::read_to_string(d.join("fixture.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["graph"]["nodes"].as_array().unwrap().len(), 4, "4 concept nodes before augmentation");
    assert_eq!(v["tokens"].as_array().unwrap().len(), 6);
}

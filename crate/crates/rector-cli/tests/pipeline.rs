//! End-to-end checks of the `rector` binary: artifact wiring, exit
//! codes, and byte-level determinism of the generation stage.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

/// Small corpus + model so every stage finishes in well under a second.
const TINY_CONF: &str = "\
gen.circuits=6
gen.websites=3
gen.visits=1
split.train_frac=0.5
window.w=4
window.seconds=5.0
window.l=30
model.hidden=8
model.attn=4
model.embed=8
train.batch=8
train.epochs=2
train.lr=0.003
train.hard_frac=0.0
";

fn write_conf(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.conf");
    fs::write(&path, body).unwrap();
    path
}

fn rector(dir: &Path, conf: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rector"))
        .arg("--config")
        .arg(conf)
        .arg("--out")
        .arg(dir)
        .arg("--seed")
        .arg("11")
        .args(args)
        .output()
        .expect("spawn rector")
}

fn run_ok(dir: &Path, conf: &Path, args: &[&str]) {
    let out = rector(dir, conf, args);
    assert!(
        out.status.success(),
        "{args:?} failed (code {:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_output_is_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let conf_a = write_conf(a.path(), TINY_CONF);
    let conf_b = write_conf(b.path(), TINY_CONF);
    run_ok(a.path(), &conf_a, &["gen"]);
    run_ok(b.path(), &conf_b, &["gen"]);
    let da = fs::read(a.path().join("dataset.jsonl")).unwrap();
    let db = fs::read(b.path().join("dataset.jsonl")).unwrap();
    assert!(!da.is_empty());
    assert_eq!(da, db, "same config and seed must generate identical bytes");
}

#[test]
fn match_before_index_exits_with_missing_input_code() {
    let dir = TempDir::new().unwrap();
    let conf = write_conf(dir.path(), TINY_CONF);
    let out = rector(dir.path(), &conf, &["match"]);
    assert_eq!(out.status.code(), Some(2), "missing inputs must exit 2");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("index.json"),
        "error should name the missing artifact, got: {stderr}"
    );
}

#[test]
fn stale_config_exits_3_and_force_overrides() {
    let dir = TempDir::new().unwrap();
    let conf = write_conf(dir.path(), TINY_CONF);
    run_ok(dir.path(), &conf, &["gen"]);

    // Changing a generation parameter invalidates the stored dataset.
    let stale = write_conf(dir.path(), &TINY_CONF.replace("gen.circuits=6", "gen.circuits=8"));
    let out = rector(dir.path(), &stale, &["split"]);
    assert_eq!(out.status.code(), Some(3), "hash mismatch must exit 3");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("hash"), "error should mention the hash, got: {stderr}");

    let out = Command::new(env!("CARGO_BIN_EXE_rector"))
        .arg("--config")
        .arg(&stale)
        .arg("--out")
        .arg(dir.path())
        .arg("--seed")
        .arg("11")
        .arg("--force")
        .arg("split")
        .output()
        .unwrap();
    assert!(out.status.success(), "--force must bypass the hash check");
}

#[test]
fn downstream_flag_changes_do_not_invalidate_upstream_artifacts() {
    let dir = TempDir::new().unwrap();
    let conf = write_conf(dir.path(), TINY_CONF);
    run_ok(dir.path(), &conf, &["gen"]);
    run_ok(dir.path(), &conf, &["split"]);
    // A different epoch budget is a training-stage change only; the split
    // artifacts must still be accepted.
    run_ok(dir.path(), &conf, &["train", "--epochs", "1"]);
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let conf = write_conf(dir.path(), TINY_CONF);
    run_ok(dir.path(), &conf, &["gen"]);
    run_ok(dir.path(), &conf, &["split"]);
    run_ok(dir.path(), &conf, &["featurize"]);
    run_ok(dir.path(), &conf, &["train"]);
    run_ok(dir.path(), &conf, &["embed"]);
    run_ok(dir.path(), &conf, &["index"]);
    run_ok(dir.path(), &conf, &["match"]);
    run_ok(
        dir.path(),
        &conf,
        &["eval", "--sigma", "1.0", "-N", "3", "-M", "3"],
    );

    for name in [
        "dataset.jsonl",
        "train.jsonl",
        "test.jsonl",
        "features.bin",
        "checkpoint.json",
        "train_log.csv",
        "embeddings.json",
        "index.json",
        "matches.json",
        "eval_sigma_1.00.json",
        "roc_sigma_1.00.csv",
    ] {
        assert!(dir.path().join(name).exists(), "missing artifact {name}");
    }

    // The evaluation file must carry both matchers and a valid ROC.
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval_sigma_1.00.json")).unwrap())
            .unwrap();
    for matcher in ["pairwise", "ann"] {
        let report = &eval[matcher];
        assert_eq!(report["sigma"], 1.0);
        assert!(report["roc"].as_array().unwrap().len() >= 2);
        assert!(report["comparisons"].as_u64().unwrap() > 0);
    }
}

#[test]
fn eval_sweep_writes_one_report_per_sigma() {
    let dir = TempDir::new().unwrap();
    let conf = write_conf(dir.path(), TINY_CONF);
    run_ok(dir.path(), &conf, &["gen"]);
    run_ok(dir.path(), &conf, &["split"]);
    run_ok(dir.path(), &conf, &["train"]);
    run_ok(dir.path(), &conf, &["embed"]);
    run_ok(
        dir.path(),
        &conf,
        &[
            "eval", "--sigma", "0.5", "--sigma", "1.0", "-N", "3", "-M", "3",
        ],
    );
    assert!(dir.path().join("eval_sigma_0.50.json").exists());
    assert!(dir.path().join("eval_sigma_1.00.json").exists());
}

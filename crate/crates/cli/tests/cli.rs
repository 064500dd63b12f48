use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use fuzzy_attn_cli::commands::SamplePrediction;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_fuzzy-attn");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove(fuzzy_attn_cli::OUTPUT_ROOT_ENV)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exit code")
}

/// 16 trials from 2 dyads.
fn corpus(dir: &Path) {
    ok(dir, &["synth", "--dyads", "2", "--per-condition", "4", "--seed", "3", "-o", "d.ftrial"]);
}

const TINY: &[&str] = &["--d-model", "8", "--rules", "3", "--depth", "2", "--batch-size", "4", "-q"];

fn train_tiny(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["train", "--data", "d.ftrial", "-o", out, "--epochs", "2"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn synth_summary_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["synth", "--dyads", "2", "--per-condition", "4", "-o", "sub/x.ftrial"]);
    assert!(stdout.contains("trials: 16"));
    assert!(stdout.contains("8 positive / 8 negative"));
    assert!(stdout.contains("probe accuracy"));
    assert!(dir.path().join("sub/x.ftrial").exists());
    assert_eq!(code(dir.path(), &["synth", "--per-condition", "0"]), 2);
    assert_eq!(code(dir.path(), &["synth", "--bogus"]), 2);
    std::fs::write(dir.path().join("g.json"), "{\"amplitude\": 1.0}").unwrap();
    assert_eq!(code(dir.path(), &["synth", "--gen-config", "g.json"]), 2);
}

#[test]
fn output_root_override() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("root");
    let out = Command::new(BIN)
        .args(["synth", "--dyads", "1", "--per-condition", "1", "-o", "x.ftrial"])
        .current_dir(dir.path())
        .env(fuzzy_attn_cli::OUTPUT_ROOT_ENV, &root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("x.ftrial").exists());
    assert!(!dir.path().join("x.ftrial").exists());
}

#[test]
fn train_writes_checkpoint_history_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    train_tiny(dir.path(), "run", &["--attn", "fuzzy,dot"]);
    let run = dir.path().join("run");
    let history = std::fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    for line in history.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        for key in ["accuracy", "recall", "precision", "f1", "roc_auc", "pr_auc"] {
            assert!(rec["val"].get(key).is_some(), "{key} missing");
        }
    }
    let manifest: Value = serde_json::from_slice(&std::fs::read(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["meta"]["seed"], 0);
    assert!(manifest["meta"]["config_hash"].as_str().unwrap().len() == 64);
    let split = &manifest["split"];
    let n: usize = ["train", "val", "test"].iter().map(|k| split[k].as_array().unwrap().len()).sum();
    assert_eq!(n, 16);
    let ck: Value = serde_json::from_slice(&std::fs::read(run.join("checkpoint/manifest.json")).unwrap()).unwrap();
    let kinds = &ck["model"]["encoder"]["attention_kinds"];
    assert_eq!(kinds, &serde_json::json!(["fuzzy", "dot"]));
}

#[test]
fn train_usage_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let d = dir.path();
    assert_eq!(code(d, &["train", "--data", "missing.ftrial"]), 2);
    assert_eq!(code(d, &["train", "--data", "d.ftrial", "--attn", "fuzzy,dot", "--depth", "3"]), 2);
    assert_eq!(code(d, &["train", "--data", "d.ftrial", "--structure", "sideways"]), 2);
    assert_eq!(code(d, &["train", "--data", "d.ftrial", "--epochs", "5", "--warmup", "5"]), 2);
    std::fs::write(d.join("c.json"), "{\"epochs\": 2, \"colour\": 1}").unwrap();
    assert_eq!(code(d, &["train", "--data", "d.ftrial", "--config", "c.json"]), 2);
    // A step size this large overflows the parameters within one epoch.
    let mut args = vec!["train", "--data", "d.ftrial", "-o", "boom", "--epochs", "2", "--lr", "1e300"];
    args.extend_from_slice(TINY);
    let out = run(d, &args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numeric"));
}

#[test]
fn config_file_is_used_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    std::fs::write(
        dir.path().join("c.json"),
        "{\"seed\": 9, \"epochs\": 1, \"rules\": 2, \"d_model\": 8, \"depth\": 1, \"batch_size\": 4}",
    )
    .unwrap();
    ok(dir.path(), &["train", "--data", "d.ftrial", "--config", "c.json", "--rules", "3", "-q", "-o", "r"]);
    let ck: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r/checkpoint/manifest.json")).unwrap()).unwrap();
    assert_eq!(ck["seed"], 9);
    assert_eq!(ck["model"]["encoder"]["rules"], 3);
    assert_eq!(ck["model"]["encoder"]["d_model"], 8);
    let history = std::fs::read_to_string(dir.path().join("r/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 1);
}

#[test]
fn eval_exports_every_sample() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    train_tiny(dir.path(), "run", &[]);
    let d = dir.path();
    ok(d, &["eval", "--checkpoint", "run/checkpoint", "--data", "d.ftrial", "-o", "ev"]);
    let preds: Vec<SamplePrediction> = std::fs::read_to_string(d.join("ev/predictions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(preds.len(), 16);
    let report: Value = serde_json::from_slice(&std::fs::read(d.join("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(report["n_samples"], 16);

    // Accuracy recomputed from the export matches the report.
    let acc = preds.iter().filter(|p| p.correct).count() as f64 / 16.0;
    assert_eq!(report["metrics"]["accuracy"].as_f64().unwrap(), acc);
    // Grouped accuracy by image type needs nothing but the export.
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for p in &preds {
        let g = groups.entry(p.image_type.to_string()).or_default();
        g.0 += usize::from(p.correct);
        g.1 += 1;
    }
    assert_eq!(groups.len(), 2);
    assert_eq!(groups.values().map(|g| g.1).sum::<usize>(), 16);
    assert_eq!(groups.values().map(|g| g.0).sum::<usize>(), preds.iter().filter(|p| p.correct).count());

    ok(d, &["eval", "--checkpoint", "run/checkpoint", "--data", "d.ftrial", "--run", "run/run.json", "--split", "test", "-o", "ev2"]);
    let test: Value = serde_json::from_slice(&std::fs::read(d.join("ev2/eval.json")).unwrap()).unwrap();
    assert_eq!(test["split"], "test");
    assert_eq!(test["n_samples"], 2);
    assert_eq!(code(d, &["eval", "--checkpoint", "run/checkpoint", "--data", "d.ftrial", "--split", "val"]), 2);
}

#[test]
fn eval_rejects_mismatched_or_tampered_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let d = dir.path();
    train_tiny(d, "run", &["--structure", "channel-first"]);
    ok(d, &["synth", "--dyads", "1", "--per-condition", "2", "-o", "other.ftrial"]);
    ok(d, &["eval", "--checkpoint", "run/checkpoint", "--data", "other.ftrial", "-o", "ev"]);

    // Channel tokens carry one value per time step, so a shorter window no longer fits.
    std::fs::write(d.join("g.json"), serde_json::json!({
        "active_sites": [5, 11], "amplitude": 1.0, "hbr_ratio": 0.5, "coupling": [0.2, 0.7],
        "coupling_shift": 0.6, "jitter_std": 0.2, "latent_std": 0.3, "noise_std": 0.3,
        "drift_amplitude": 0.1, "onset_s": 0.0, "window_s": 5.0
    }).to_string()).unwrap();
    ok(d, &["synth", "--dyads", "1", "--per-condition", "2", "--gen-config", "g.json", "-o", "short.ftrial"]);
    assert_eq!(code(d, &["eval", "--checkpoint", "run/checkpoint", "--data", "short.ftrial"]), 2);

    let manifest = d.join("run/checkpoint/manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replacen("\"rules\": 3", "\"rules\": 4", 1)).unwrap();
    assert_eq!(code(d, &["eval", "--checkpoint", "run/checkpoint", "--data", "d.ftrial"]), 2);
}

#[test]
fn explain_report_contents() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let d = dir.path();
    train_tiny(d, "cf", &["--structure", "channel-first"]);
    ok(d, &["explain", "--checkpoint", "cf/checkpoint", "--data", "d.ftrial", "--sample", "0", "--sample", "5", "-o", "ex.json"]);
    let ex: Value = serde_json::from_slice(&std::fs::read(d.join("ex.json")).unwrap()).unwrap();
    assert_eq!(ex["layer"], 1);
    assert_eq!(ex["samples"].as_array().unwrap().len(), 2);
    let rules = &ex["samples"][0]["streams"][0]["rules"];
    assert_eq!(rules.as_array().unwrap().len(), 3);
    assert_eq!(rules[0]["top_labels"].as_array().unwrap().len(), 3);
    assert!(rules[0]["top_labels"][0].as_str().unwrap().starts_with("CH"));
    let t = ex["rule_map"]["t"].as_array().unwrap();
    assert_eq!(t.len(), 3);
    assert_eq!(t[0].as_array().unwrap().len(), 40);
    let protos = ex["prototypes"].as_array().unwrap();
    assert_eq!(protos.len(), 3);
    assert_eq!(protos[0]["vector"].as_array().unwrap().len(), 8);
    let raw = ex["input_prototypes"].as_array().unwrap();
    assert_eq!(raw.len(), 3);
    assert_eq!(raw[0]["values"].as_array().unwrap().len(), 86);
    assert!(ex["ibs"]["pearson"]["t"].is_number());
    assert_eq!(ex["meta"]["seed"], 0);

    assert_eq!(code(d, &["explain", "--checkpoint", "cf/checkpoint", "--data", "d.ftrial", "--sample", "16"]), 2);
    train_tiny(d, "dot", &["--attn", "dot"]);
    assert_eq!(code(d, &["explain", "--checkpoint", "dot/checkpoint", "--data", "d.ftrial"]), 2);
    assert_eq!(code(d, &["explain", "--checkpoint", "cf/checkpoint", "--data", "d.ftrial", "--layer", "7"]), 2);
}

#[test]
fn ablation_row_counts_and_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let d = dir.path();
    let base = ["--data", "d.ftrial", "--epochs", "1", "--d-model", "8", "--batch-size", "8", "-q"];
    let mut args = vec!["ablate", "--grid", "depth", "--values", "1,2", "-o", "ab"];
    args.extend_from_slice(&base);
    args.extend_from_slice(&["--rules", "2"]);
    ok(d, &args);
    let mut rdr = csv::Reader::from_path(d.join("ab/ablation.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    for m in ["accuracy", "recall", "precision", "f1", "roc_auc", "pr_auc"] {
        assert!(headers.iter().any(|h| h == m), "{m} column missing");
    }
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert!(d.join("ab/cell-01/checkpoint/manifest.json").exists());

    let mut empty = vec!["ablate", "--grid", "rules", "--values", ",", "-o", "ab2"];
    empty.extend_from_slice(&base);
    assert_eq!(code(d, &empty), 2);
    let mut bad = vec!["ablate", "--grid", "replace", "--values", "1", "-o", "ab3"];
    bad.extend_from_slice(&base);
    assert_eq!(code(d, &bad), 2);
}

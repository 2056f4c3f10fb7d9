//! End-to-end runs of the `vtad` binary on a small synthetic corpus.

use std::path::Path;
use std::process::{Command, Output};

use vtad::audio::read_wav;
use vtad::dataset::{read_manifest, read_pairs};
use vtad::features::FeatureStore;

fn vtad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vtad(args);
    assert!(
        out.status.success(),
        "vtad {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let corpus = root.join("corpus");
    let trimmed = root.join("trimmed");
    let feats = root.join("feats");
    let pairs = root.join("pairs.tsv");
    let ckpt = root.join("model.ckpt");
    let report = root.join("report.jsonl");

    ok(&[
        "synth-fixture",
        "--out",
        s(&corpus),
        "--speakers-per-gender",
        "3",
        "--utterances-per-speaker",
        "3",
    ]);

    ok(&[
        "trim",
        "--manifest",
        s(&corpus.join("manifest.tsv")),
        "--out-dir",
        s(&trimmed),
        "--jobs",
        "2",
    ]);
    let records = read_manifest(&trimmed.join("manifest.tsv")).unwrap();
    assert_eq!(records.len(), 18);
    let before = read_wav(&corpus.join(&read_manifest(&corpus.join("manifest.tsv")).unwrap()[0].path)).unwrap();
    let after = read_wav(&trimmed.join(&records[0].path)).unwrap();
    assert!(after.len() < before.len());

    ok(&[
        "extract",
        "--manifest",
        s(&trimmed.join("manifest.tsv")),
        "--out",
        s(&feats),
        "--layers",
        "4",
        "--dim",
        "64",
        "--jobs",
        "2",
    ]);
    let store = FeatureStore::open(&feats).unwrap();
    assert_eq!(store.len(), 18);
    let manifest_text = std::fs::read_to_string(feats.join("features.tsv")).unwrap();
    assert!(manifest_text.starts_with('#'), "feature manifest lacks provenance");

    ok(&[
        "build-pairs",
        "--annotations",
        s(&corpus.join("annotations.tsv")),
        "--manifest",
        s(&trimmed.join("manifest.tsv")),
        "--out",
        s(&pairs),
        "--pairs-per",
        "4",
    ]);
    let built = read_pairs(&pairs).unwrap();
    assert_eq!(built.len() % 4, 0);
    assert!(!built.is_empty());

    let train_out = ok(&[
        "train",
        "--pairs",
        s(&pairs),
        "--val-pairs",
        s(&pairs),
        "--features",
        s(&feats),
        "--out",
        s(&ckpt),
        "--epochs",
        "2",
        "--lr",
        "1e-3",
    ]);
    assert_eq!(train_out.lines().count(), 2);
    let log = std::fs::read_to_string(root.join("model.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3, "provenance record plus one line per epoch");

    // resuming under other settings is refused without --force
    let resumed = root.join("resumed.ckpt");
    let refused = vtad(&[
        "train",
        "--pairs",
        s(&pairs),
        "--features",
        s(&feats),
        "--out",
        s(&resumed),
        "--epochs",
        "3",
        "--resume",
        s(&ckpt),
    ]);
    assert_eq!(refused.status.code(), Some(1));
    ok(&[
        "train",
        "--pairs",
        s(&pairs),
        "--features",
        s(&feats),
        "--out",
        s(&resumed),
        "--epochs",
        "3",
        "--lr",
        "1e-3",
        "--resume",
        s(&ckpt),
        "--force",
    ]);

    let table = ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--pairs",
        s(&pairs),
        "--features",
        s(&feats),
        "--report",
        s(&report),
        "--jobs",
        "2",
    ]);
    assert!(table.contains("Average") || table.contains("average"), "{table}");
    let jsonl = std::fs::read_to_string(&report).unwrap();
    for line in jsonl.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    assert!(root.join("report.txt").exists());

    let first = &built[0];
    let scores = ok(&[
        "predict",
        "--ckpt",
        s(&ckpt),
        "--features",
        s(&feats),
        "--utt-a",
        &first.utt_a,
        "--utt-b",
        &first.utt_b,
    ]);
    assert_eq!(scores.lines().count(), 34);
    for line in scores.lines() {
        let p: f64 = line.rsplit('\t').next().unwrap().parse().unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    let leak = vtad(&[
        "split-check",
        "--train",
        s(&pairs),
        "--eval",
        s(&pairs),
        "--manifest",
        s(&trimmed.join("manifest.tsv")),
        "--protocol",
        "unseen",
    ]);
    assert_eq!(leak.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&leak.stdout).contains("violation"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(vtad(&["train"]).status.code(), Some(2));
    assert_eq!(vtad(&["nonsense"]).status.code(), Some(2));
    assert_eq!(vtad(&[]).status.code(), Some(2));
}

#[test]
fn train_help_lists_defaults() {
    let help = ok(&["train", "--help"]);
    for needle in [
        "[default: 10]",
        "[default: 16]",
        "[default: 1e-4]",
        "[default: 0.01]",
        "[default: cosine]",
        "[default: 42]",
        "[default: ffn]",
    ] {
        assert!(help.contains(needle), "missing {needle} in\n{help}");
    }
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let out = vtad(&[
        "build-pairs",
        "--annotations",
        "/nonexistent/a.tsv",
        "--manifest",
        "/nonexistent/m.tsv",
        "--out",
        "/tmp/x.tsv",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

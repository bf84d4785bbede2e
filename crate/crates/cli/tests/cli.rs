use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn duotrain(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duotrain"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("DUOTRAIN_THREADS")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = duotrain(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

const RUN: &str = r#"{
  "data": {"lexicon": "corpus/lexicon.dict", "train_manifest": "corpus/train.tsv", "text_corpus": "corpus/text.txt", "artifacts_dir": "art"},
  "model": {"embed_dim": 16, "ffn_dim": 32, "speech_layers": 1, "text_layers": 1, "decoder_layers": 1, "heads": 2, "subword_vocab_size": 60},
  "train": {"epochs": 2, "speech_batch_frames": 400, "text_batch_tokens": 150, "warmup_steps": 0}
}"#;

/// Synthetic corpus plus prepared text and audio artifacts.
fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-synth", "--out", "corpus", "--size", "12", "--test-size", "4", "--text-size", "20", "--words", "20"]);
    std::fs::write(d.join("run.json"), RUN).unwrap();
    ok(d, &["prepare-text", "--config", "run.json"]);
    ok(d, &["prepare-audio", "--config", "run.json"]);
    dir
}

#[test]
fn score_wer_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("ref.txt"), "the cat sat\nIt's delightful\n").unwrap();
    let out = ok(d, &["score", "--metric", "wer", "--ref", "ref.txt", "--hyp", "ref.txt"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["metric"], "wer");
    assert_eq!(report["value"].as_f64(), Some(0.0));
    assert_eq!(report["breakdown"]["reference_words"], 5);
    let out = ok(d, &["score", "--metric", "bleu", "--ref", "ref.txt", "--hyp", "ref.txt"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((report["value"].as_f64().unwrap() - 100.0).abs() < 1e-9);
}

#[test]
fn gen_synth_is_reproducible_and_handles_size_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-synth", "--out", "empty", "--size", "0"]);
    let manifest = std::fs::read_to_string(d.join("empty/train.tsv")).unwrap();
    assert_eq!(manifest, "id\taudio\tn_frames\ttranscript\ttranslation\n");

    for out in ["a", "b"] {
        ok(d, &["gen-synth", "--out", out, "--seed", "5", "--size", "6", "--test-size", "2", "--text-size", "3", "--held-out", "2"]);
    }
    let (a, b) = (files_under(&d.join("a")), files_under(&d.join("b")));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.strip_prefix(d.join("a")).unwrap(), y.strip_prefix(d.join("b")).unwrap());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn identical_training_runs_write_identical_checkpoints() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["train", "--config", "run.json", "--train.checkpoint_dir", "run1"]);
    ok(d, &["train", "--config", "run.json", "--train.checkpoint_dir", "run2"]);
    for name in ["checkpoint_0001.dtckpt", "checkpoint_0002.dtckpt", "average.dtckpt"] {
        let a = std::fs::read(d.join("run1").join(name)).unwrap();
        let b = std::fs::read(d.join("run2").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
    let log = std::fs::read_to_string(d.join("run1/train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["step", "task", "loss", "lr", "tokens"] {
        assert!(first.get(key).is_some(), "{key}");
    }

    // Decode and score against the manifest.
    ok(d, &["decode", "--config", "run.json", "--checkpoint", "run1/average.dtckpt", "--manifest", "corpus/test.tsv", "--output", "hyp.tsv"]);
    let hyp = std::fs::read_to_string(d.join("hyp.tsv")).unwrap();
    assert_eq!(hyp.lines().next(), Some("id\thypothesis\tnormalized_score"));
    assert_eq!(hyp.lines().count(), 5);
    let out = ok(d, &["score", "--metric", "wer", "--ref", "corpus/test.tsv", "--hyp", "hyp.tsv"]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(report["value"].as_f64().unwrap() >= 0.0);
}

#[test]
fn averaging_identical_checkpoints_is_identity() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["train", "--config", "run.json", "--train.epochs", "1", "--train.checkpoint_dir", "ck"]);
    // The averaged file carries no optimizer state; averaging copies of it
    // must reproduce it byte for byte.
    let base = d.join("ck/average.dtckpt");
    std::fs::create_dir(d.join("copies")).unwrap();
    for i in 1..=10 {
        std::fs::copy(&base, d.join(format!("copies/checkpoint_{i:04}.dtckpt"))).unwrap();
    }
    ok(d, &["average", "--dir", "copies", "--last", "10", "--output", "avg.dtckpt"]);
    assert!(std::fs::read(&base).unwrap() == std::fs::read(d.join("avg.dtckpt")).unwrap());
    let inputs: Vec<String> = (1..=10).map(|i| format!("copies/checkpoint_{i:04}.dtckpt")).collect();
    let mut args = vec!["average"];
    for p in &inputs {
        args.extend(["--input", p.as_str()]);
    }
    args.extend(["--output", "avg2.dtckpt"]);
    ok(d, &args);
    assert!(std::fs::read(&base).unwrap() == std::fs::read(d.join("avg2.dtckpt")).unwrap());
}

#[test]
fn exit_codes_separate_validation_from_runtime_failures() {
    let dir = prepared();
    let d = dir.path();
    let code = |args: &[&str]| duotrain(d, args).status.code();
    assert_eq!(code(&["train", "--config", "run.json", "--train.epoch", "2"]), Some(1));
    assert_eq!(code(&["train", "--config", "missing.json"]), Some(1));
    assert_eq!(code(&["train", "--config", "run.json", "--task.mask_ratio", "2"]), Some(1));
    assert_eq!(code(&["no-such-command"]), Some(1));
    let stderr = String::from_utf8(duotrain(d, &["train", "--config", "run.json", "--model.heads", "\"two\""]).stderr).unwrap();
    assert!(stderr.contains("model.heads"), "{stderr}");

    std::fs::write(d.join("broken.dtckpt"), b"DTCKPT01 truncated").unwrap();
    let args = ["decode", "--config", "run.json", "--checkpoint", "broken.dtckpt", "--manifest", "corpus/test.tsv", "--output", "h.tsv"];
    assert_eq!(code(&args), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_duotrain"))
        .args(["score", "--metric", "wer", "--ref", "run.json", "--hyp", "run.json"])
        .current_dir(d)
        .env("DUOTRAIN_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

//! End-to-end checks of the binary: flag contracts, exit codes, artifact
//! determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn a2w(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_a2w"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_tiny_spec(path: &Path) {
    fs::write(
        path,
        r#"
alphabet_size = 6
frames_per_char = 2
feature_dim = 8
noise_sigma = 0.05
lexicon_size = 15
zipf_exponent = 1.0
word_len = [2, 3]
utt_words = [1, 2]
n_train = 40
n_valid = 8
n_test = 8
n_test_oov = 8
n_oov_words = 4
oov_per_utterance = 1
lm_extra_lines = 20
seed = 3
"#,
    )
    .unwrap();
}

fn write_tiny_train_config(path: &Path) {
    fs::write(
        path,
        r#"
[model]
enc_hidden = 4
dec_hidden = 6
att_dim = 6
loc_channels = 2
loc_kernel_width = 3
word_embed = 4
char_embed = 3
dropout = 0.1

[train]
max_epochs = 2
batch_size = 8

[vocab]
min_count = 1
"#,
    )
    .unwrap();
}

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    corpus: std::path::PathBuf,
    am: std::path::PathBuf,
    lm: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let spec = root.join("spec.toml");
    write_tiny_spec(&spec);
    let corpus = root.join("corpus");
    assert!(a2w(&["synth", "--spec", spec.to_str().unwrap(), "--out", corpus.to_str().unwrap()])
        .status
        .success());

    let cfg = root.join("train.toml");
    write_tiny_train_config(&cfg);
    let am = root.join("am");
    let out = a2w(&[
        "train-am",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        am.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert!(out.status.success(), "train-am failed: {}", String::from_utf8_lossy(&out.stderr));

    let lm = root.join("lm");
    let out = a2w(&[
        "train-lm",
        "--am",
        am.to_str().unwrap(),
        "--text",
        corpus.join("lm_small.txt").to_str().unwrap(),
        "--out",
        lm.to_str().unwrap(),
        "--epochs",
        "2",
        "--hidden",
        "6",
    ]);
    assert!(out.status.success(), "train-lm failed: {}", String::from_utf8_lossy(&out.stderr));
    Fixture { dir, corpus, am, lm }
}

#[test]
fn beta_without_lm_is_rejected() {
    let f = fixture();
    let out = a2w(&[
        "decode",
        "--corpus",
        f.corpus.join("test/manifest.jsonl").to_str().unwrap(),
        "--am",
        f.am.to_str().unwrap(),
        "--beta",
        "0.2",
        "--out",
        "/tmp/never",
    ]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--lm"), "unexpected message: {err}");
}

#[test]
fn decode_and_eval_produce_artifacts_and_are_deterministic() {
    let f = fixture();
    let manifest = f.corpus.join("test_oov/manifest.jsonl");
    let run = |out_dir: &Path| {
        let out = a2w(&[
            "decode",
            "--corpus",
            manifest.to_str().unwrap(),
            "--am",
            f.am.to_str().unwrap(),
            "--lm",
            f.lm.to_str().unwrap(),
            "--beta",
            "0.2",
            "--resolve",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(out_dir.join("hyps.jsonl")).unwrap()
    };
    let d1 = f.dir.path().join("dec1");
    let d2 = f.dir.path().join("dec2");
    let h1 = run(&d1);
    let h2 = run(&d2);
    assert_eq!(h1, h2, "decode output is not deterministic");
    assert!(d1.join("resolve.jsonl").exists());
    assert!(d1.join("decode_summary.json").exists());

    // every raw OOV emission becomes exactly one alignment record
    for line in String::from_utf8_lossy(&h1).lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        let n_oov = rec["n_oov"].as_u64().unwrap();
        let accounted = rec["n_resolved"].as_u64().unwrap() + rec["n_fallback"].as_u64().unwrap();
        assert_eq!(n_oov, accounted, "OOV slots not fully accounted: {rec}");
    }

    let eval_dir = f.dir.path().join("eval");
    let out = a2w(&[
        "eval",
        "--refs",
        manifest.to_str().unwrap(),
        "--hyps",
        d1.join("hyps.jsonl").to_str().unwrap(),
        "--timing",
        d1.join("decode_summary.json").to_str().unwrap(),
        "--system",
        "smoke",
        "--split",
        "test_oov",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("system,split,wer,"));
    assert!(csv.lines().nth(1).unwrap().starts_with("smoke,test_oov,"));
}

#[test]
fn mismatched_vocabulary_is_refused() {
    let f = fixture();
    // retrain an AM with a different vocabulary cutoff; its fingerprint
    // cannot match the LM trained against the original one
    let cfg = f.dir.path().join("train2.toml");
    write_tiny_train_config(&cfg);
    let am2 = f.dir.path().join("am2");
    let out = a2w(&[
        "train-am",
        "--corpus",
        f.corpus.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--vocab-min-count",
        "3",
        "--out",
        am2.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = a2w(&[
        "decode",
        "--corpus",
        f.corpus.join("test/manifest.jsonl").to_str().unwrap(),
        "--am",
        am2.to_str().unwrap(),
        "--lm",
        f.lm.to_str().unwrap(),
        "--out",
        f.dir.path().join("never").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn missing_corpus_is_a_data_error() {
    let out = a2w(&[
        "decode",
        "--corpus",
        "/nonexistent/manifest.jsonl",
        "--am",
        "/nonexistent/am",
        "--out",
        "/tmp/never",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gradcheck_passes() {
    let out = a2w(&["gradcheck", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("match finite differences"), "{text}");
}

#[test]
fn train_is_deterministic_across_runs() {
    let f = fixture();
    let cfg = f.dir.path().join("train3.toml");
    write_tiny_train_config(&cfg);
    let run = |name: &str| {
        let out_dir = f.dir.path().join(name);
        let out = a2w(&[
            "train-am",
            "--corpus",
            f.corpus.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "11",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(out_dir.join("params.bin")).unwrap()
    };
    assert_eq!(run("t1"), run("t2"), "checkpoints differ across identical runs");
}

mod common;

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparsecoder"));
    c.env_remove("SPARSECODER_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["analyze", "tokenize", "mask", "build-dataset", "train", "summarize", "eval", "bench"] {
        assert!(text.contains(sub), "{sub}");
    }
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["mask", "--n", "8", "--w", "1"]).status.code(), Some(1));
    assert_eq!(run(&["analyze"]).status.code(), Some(1));
}

#[test]
fn mask_reports_counts_and_ppm() {
    let dir = tempfile::tempdir().unwrap();
    let ppm = dir.path().join("m.ppm");
    let out = run(&["mask", "--n", "16", "--w", "4", "--global", "0", "--ident", "5,9", "--ppm", s(&ppm)]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let expected = common::oracle_pairs(16, 4, &[0], &[5, 9]).len();
    assert_eq!(v["nonzero_count"], expected);
    let bytes = std::fs::read(&ppm).unwrap();
    assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
    assert_eq!(bytes.len(), "P6\n16 16\n255\n".len() + 16 * 16 * 3);
}

#[test]
fn analyze_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.py");
    std::fs::write(&f, "import os\n\nclass A:\n    def f(self, x):\n        y = x\n        return os.path.join(y)\n").unwrap();
    let out = run(&["analyze", "--json", s(&f), s(&f)]);
    assert_eq!(out.status.code(), Some(0));
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], lines[1]);
    assert_eq!(lines[0]["parse_ok"], true);
    let occ = lines[0]["occurrences"].as_array().unwrap();
    assert!(occ.iter().any(|o| o["name"] == "y"));
    assert!(occ.iter().any(|o| o["name"] == "self"));
    let skipped = run(&["analyze", "--json", "--skip-self", s(&f)]);
    let v: serde_json::Value = serde_json::from_slice(&skipped.stdout).unwrap();
    assert!(!v["occurrences"].as_array().unwrap().iter().any(|o| o["name"] == "self"));
    assert_eq!(run(&["analyze", s(&dir.path().join("missing.py"))]).status.code(), Some(2));
}

#[test]
fn bench_writes_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let plot = dir.path().join("bench.svg");
    let o = run(&["bench", "--lengths", "256,512", "--out", s(&out), "--plot", s(&plot)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        for key in ["n", "attention_mode", "nonzero_pairs", "est_activation_bytes", "peak_resident_bytes", "wall_time_ms"] {
            assert!(r.get(key).is_some(), "{key}");
        }
        assert!(r["peak_resident_bytes"].as_u64().unwrap() > 0);
    }
    let modes: Vec<&str> = rows.iter().map(|r| r["attention_mode"].as_str().unwrap()).collect();
    assert!(modes.contains(&"sparse") && modes.contains(&"dense"));
    assert!(std::fs::read_to_string(&plot).unwrap().starts_with("<svg"));
    assert_eq!(run(&["bench", "--lengths", "512,256", "--out", s(&out)]).status.code(), Some(1));
}

#[test]
fn eval_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.jsonl");
    let refs = dir.path().join("ref.jsonl");
    std::fs::write(&pred, "{\"id\":\"b\",\"text\":\"return the sum\"}\n{\"id\":\"a\",\"text\":\"read a file\"}\n").unwrap();
    std::fs::write(&refs, "{\"id\":\"a\",\"text\":\"read a file\"}\n{\"id\":\"b\",\"text\":\"return the sum\"}\n").unwrap();
    let o = run(&["eval", "--pred", s(&pred), "--ref", s(&refs)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["bleu"].as_f64().unwrap() - 1.0).abs() < 1e-12, "{v}");
    std::fs::write(&refs, "{\"id\":\"a\",\"text\":\"read a file\"}\n{\"id\":\"c\",\"text\":\"x\"}\n").unwrap();
    assert_eq!(run(&["eval", "--pred", s(&pred), "--ref", s(&refs)]).status.code(), Some(2));
    std::fs::write(&refs, "not json\n").unwrap();
    assert_eq!(run(&["eval", "--pred", s(&pred), "--ref", s(&refs)]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--pred", s(&pred), "--ref", s(&refs), "--bleu-mode", "bogus"]).status.code(), Some(1));
}

#[test]
fn seed_env_overrides_flag() {
    let corpus = tempfile::tempdir().unwrap();
    common::write_corpus(&common::planted_corpus(1), corpus.path());
    let split_of = |env: Option<&str>, seed: &str| {
        let out = tempfile::tempdir().unwrap();
        let mut c = bin();
        if let Some(e) = env {
            c.env("SPARSECODER_SEED", e);
        }
        let o = c.args(["--seed", seed, "build-dataset", s(corpus.path()), s(out.path())]).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.path().join("dev.jsonl")).unwrap()
    };
    let one = split_of(None, "1");
    let two = split_of(None, "2");
    assert_ne!(one, two);
    assert_eq!(split_of(Some("2"), "1"), two);
    let bad = bin().env("SPARSECODER_SEED", "abc").args(["mask", "--n", "4", "--w", "2"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn dataset_train_summarize_eval() {
    let root = tempfile::tempdir().unwrap();
    let corpus = root.path().join("corpus");
    let files = common::planted_corpus(4);
    common::write_corpus(&files, &corpus);
    let data = root.path().join("data");
    let o = run(&["build-dataset", s(&corpus), s(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["inputs"], 200);

    let config = root.path().join("train.json");
    std::fs::write(
        &config,
        r#"{"model": {"encoder_layers": 1, "decoder_layers": 1, "d_h": 16, "heads": 2, "r": 2, "w": 8, "d_ff": 32,
            "max_code_len": 1024, "max_summary_len": 12, "summary_vocab_size": 200},
            "train": {"lr": 0.001, "batch": 16, "epochs": 1}, "tokenizer_vocab_size": 300}"#,
    )
    .unwrap();
    let ckpt = root.path().join("ckpt");
    let o = run(&["train", "--config", s(&config), "--data", s(&data), "--out", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["config.json", "weights.bin", "manifest.json", "tokenizer.json", "summary_vocab.json", "history.json"] {
        assert!(ckpt.join(name).exists(), "{name}");
    }

    let src = corpus.join(&files[0].path);
    let greedy = run(&["summarize", s(&src), "--ckpt", s(&ckpt)]);
    assert_eq!(greedy.status.code(), Some(0), "{}", String::from_utf8_lossy(&greedy.stderr));
    let beam = run(&["summarize", s(&src), "--ckpt", s(&ckpt), "--beam", "3"]);
    assert_eq!(beam.status.code(), Some(0));
    assert_eq!(run(&["summarize", s(&src), "--ckpt", s(&ckpt), "--beam", "0"]).status.code(), Some(1));

    let test = sparsecoder::dataset::read_split(&data.join("test.jsonl")).unwrap();
    let text = String::from_utf8(greedy.stdout).unwrap();
    let pred: String = test.iter().map(|p| serde_json::json!({"id": p.id, "text": text.trim()}).to_string() + "\n").collect();
    let refs: String = test.iter().map(|p| serde_json::json!({"id": p.id, "text": p.summary}).to_string() + "\n").collect();
    std::fs::write(root.path().join("pred.jsonl"), pred).unwrap();
    std::fs::write(root.path().join("ref.jsonl"), refs).unwrap();
    let metrics = root.path().join("metrics.json");
    let o = run(&[
        "eval",
        "--pred",
        s(&root.path().join("pred.jsonl")),
        "--ref",
        s(&root.path().join("ref.jsonl")),
        "--bleu-mode",
        "corpus",
        "--out",
        s(&metrics),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    for key in ["bleu", "meteor", "rouge_l"] {
        let x = v[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x), "{key} {x}");
    }
}

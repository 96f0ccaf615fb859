use std::path::Path;
use std::process::{Command, Output};

fn docline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docline")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn gen(out: &Path, seed: &str) -> serde_json::Value {
    let o = docline(&["gen", "--seed", seed, "--count", "100", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    stdout_json(&o)
}

#[test]
fn gen_twice_gives_identical_manifest_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(&dir.path().join("a"), "7");
    let b = gen(&dir.path().join("b"), "7");
    assert_eq!(a["manifest_sha256"], b["manifest_sha256"]);
    assert_eq!(a["manifest_sha256"].as_str().unwrap().len(), 64);
    let c = gen(&dir.path().join("c"), "8");
    assert_ne!(a["manifest_sha256"], c["manifest_sha256"]);
}

#[test]
fn zero_steps_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "batch_size = 2\n").unwrap();
    let o = docline(&["pretrain", "--config", cfg.to_str().unwrap(), "--steps", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_trc_passes() {
    let o = docline(&["gradcheck", "--loss", "trc", "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["loss"], "trc");
    assert!(v["max_rel_err"].as_f64().unwrap() < 1e-4, "{v}");
    assert_eq!(v["pass"], true);
}

#[test]
fn unknown_flags_exit_1_and_help_exits_0() {
    assert_eq!(docline(&["gen", "--bogus"]).status.code(), Some(1));
    assert_eq!(docline(&["frobnicate"]).status.code(), Some(1));
    for cmd in ["gen", "pretrain", "resume", "gradcheck", "eval-align", "render", "finetune-ner", "classify"] {
        let o = docline(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Exit codes"), "{cmd}");
    }
}

#[test]
fn print_config_reflects_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "seed = 5\nbatch_size = 2\n[schedule]\ntotal_steps = 50\n").unwrap();
    let o = docline(&["pretrain", "--config", cfg.to_str().unwrap(), "--batch-size", "3", "--objectives", "mlm,trc", "--print-config"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let printed: toml::Table = text.parse().unwrap();
    assert_eq!(printed["seed"].as_integer(), Some(5));
    assert_eq!(printed["batch_size"].as_integer(), Some(3));
    assert_eq!(printed["schedule"]["total_steps"].as_integer(), Some(50));
    assert_eq!(printed["objectives"]["enabled"]["mrm"].as_bool(), Some(false));
    assert_eq!(printed["objectives"]["enabled"]["trc"].as_bool(), Some(true));

    for cmd in [&["gen", "--print-config"][..], &["finetune-ner", "--print-config"], &["classify", "--print-config"]] {
        let o = docline(cmd);
        assert!(o.status.success(), "{cmd:?}");
        assert!(String::from_utf8(o.stdout).unwrap().parse::<toml::Table>().is_ok());
    }
}

#[test]
fn invisible_ink_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = docline(&["gen", "--ink-level", "0.9", "--background-level", "0.5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = docline(&["pretrain", "--corpus", missing.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap(), "--steps", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

/// Tiny run through pretrain, resume, eval-align, render and the
/// fine-tuning commands.
#[test]
fn workflow_on_a_small_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let small = ["--lines", "2", "4", "--words-per-line", "2", "3"];
    let gen_small = |out: &str, seed: &str, extra: &[&str]| {
        let mut args = vec!["gen", "--seed", seed, "--count", "6", "--out", out];
        args.extend(small);
        args.extend(extra);
        let o = docline(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    gen_small(&p("corpus"), "1", &["--vocab-size", "32", "--first-line-tag", "KEY"]);
    gen_small(&p("other"), "2", &["--vocab-size", "32"]);

    let model = [
        "--hidden-dim", "8", "--text-layers", "1", "--fusion-layers", "1", "--heads", "2", "--ffn-dim", "16",
        "--conv-channels", "2", "2", "4", "4", "--grid", "3", "3", "--max-lines", "8", "--batch-size", "2",
    ];
    let (corpus, run, ck2) = (p("corpus"), p("run"), p("run/checkpoint-000002.ckpt"));
    let mut args = vec!["pretrain", "--corpus", &corpus, "--out-dir", &run, "--steps", "4", "--checkpoint-interval", "2"];
    args.extend(model);
    let o = docline(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["steps"], 4);
    let straight = std::fs::read(dir.path().join("run/checkpoint-000004.ckpt")).unwrap();

    let mut args = vec!["resume", "--checkpoint", &ck2, "--corpus", &corpus, "--out-dir", &run, "--steps", "4", "--checkpoint-interval", "2"];
    args.extend(model);
    let o = docline(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(dir.path().join("run/checkpoint-000004.ckpt")).unwrap(), straight);

    let ckpt = p("run/checkpoint-000004.ckpt");
    let o = docline(&["eval-align", "--checkpoint", &ckpt, "--corpus", &p("corpus"), "--report", &p("align.jsonl")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["documents"], 6);
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(std::fs::read_to_string(p("align.jsonl")).unwrap().lines().count(), 6);

    let o = docline(&["render", "--checkpoint", &ckpt, "--corpus", &p("corpus"), "--out", &p("png"), "--doc-id", "s1-00000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("png/s1-00000.png").exists());

    let o = docline(&["finetune-ner", "--checkpoint", &ckpt, "--corpus", &p("corpus"), "--epochs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["eval_documents"], 1);
    assert_eq!(v["tags"], serde_json::json!(["O", "B-KEY", "I-KEY"]));

    let o = docline(&[
        "classify", "--checkpoint", &ckpt, "--class-corpus", &p("corpus"), "--class-corpus", &p("other"), "--epochs", "1",
        "--save", &p("cls.ckpt"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["eval_documents"], 2);

    let o = docline(&["classify", "--checkpoint", &p("cls.ckpt"), "--corpus", &p("other")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> =
        String::from_utf8(o.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0]["logits"].as_array().unwrap().len(), 2);

    // No head in the pre-training checkpoint.
    let o = docline(&["classify", "--checkpoint", &ckpt, "--corpus", &p("other")]);
    assert_eq!(o.status.code(), Some(1));
    // Vocabulary mismatch between model and corpus.
    gen_small(&p("big"), "3", &["--vocab-size", "64"]);
    let o = docline(&["eval-align", "--checkpoint", &ckpt, "--corpus", &p("big")]);
    assert_eq!(o.status.code(), Some(2));
}

//! `docline`: generate synthetic corpora, pre-train, check gradients and
//! evaluate, all from one binary. Results go to stdout as JSON, logs to stderr.

mod exit;
mod flags;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use docline_core::doclib::{load_corpus, Corpus, MANIFEST_FILE};
use docline_core::evalkit::{
    alignment_accuracy, classify_document, document_alignment, finetune_document_classifier, finetune_token_classifier,
    render_alignment, TagSet,
};
use docline_core::numkit::GradCheckOptions;
use docline_core::objectives::{check_gradients, GradTarget};
use docline_core::trainkit::{self, inference_checkpoint, model_from_checkpoint};
use docline_core::{generate_corpus, Checkpoint, Document, FinetuneConfig, GenParams, Model, TrainConfig};
use serde_json::json;
use sha2::{Digest, Sha256};

use exit::Usage;
use flags::{FinetuneFlags, GenFlags, TrainFlags};

const EXIT_CODES: &str = "Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure";

#[derive(Parser, Debug)]
#[command(name = "docline", version, about = "Textline-level document pre-training toolkit", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus and print its manifest hash.
    #[command(after_help = EXIT_CODES)]
    Gen {
        #[command(flatten)]
        params: GenFlags,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the effective generator parameters as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Pre-train from scratch.
    #[command(after_help = EXIT_CODES)]
    Pretrain {
        #[command(flatten)]
        train: TrainFlags,
        /// Print the effective training config as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Continue pre-training from a checkpoint.
    #[command(after_help = EXIT_CODES)]
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        print_config: bool,
    },
    /// Compare analytic and finite-difference gradients on a micro-batch.
    #[command(after_help = EXIT_CODES)]
    Gradcheck {
        #[arg(long, value_enum, default_value_t = LossArg::All)]
        loss: LossArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Entries checked per parameter tensor, largest gradients first;
        /// 0 checks every entry.
        #[arg(long, default_value_t = 8)]
        max_entries: usize,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// Dual-stream textline alignment accuracy of a checkpoint.
    #[command(after_help = EXIT_CODES)]
    EvalAlign {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Write one JSON record per document here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Draw alignment overlays as `<doc_id>.png`.
    #[command(after_help = EXIT_CODES)]
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only these documents; all when omitted.
        #[arg(long = "doc-id")]
        doc_ids: Vec<String>,
    },
    /// Fine-tune a BIO token tagger and report entity F1.
    #[command(after_help = EXIT_CODES)]
    FinetuneNer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Trailing fraction of the corpus held out for scoring.
        #[arg(long, default_value_t = 0.2)]
        eval_fraction: f64,
        #[command(flatten)]
        finetune: FinetuneFlags,
        /// Save the fine-tuned model here.
        #[arg(long)]
        save: Option<PathBuf>,
        #[arg(long)]
        print_config: bool,
    },
    /// Fine-tune a document classifier (one corpus per class), or predict
    /// with a checkpoint that already has one.
    #[command(after_help = EXIT_CODES)]
    Classify {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training corpus for the next class id; repeat once per class.
        #[arg(long = "class-corpus", conflicts_with = "corpus")]
        class_corpora: Vec<PathBuf>,
        /// Predict every document of this corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Trailing fraction of each class corpus held out for scoring.
        #[arg(long, default_value_t = 0.2)]
        eval_fraction: f64,
        #[command(flatten)]
        finetune: FinetuneFlags,
        #[arg(long)]
        save: Option<PathBuf>,
        #[arg(long)]
        print_config: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Mlm,
    Trc,
    Mrm,
    Tgm,
    Total,
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Gen { params, count, out, print_config } => gen(&params, count, out, print_config),
        Command::Pretrain { train, print_config } => {
            let cfg = train_config(&train)?;
            if print_config {
                return print_toml(&cfg);
            }
            report_training(trainkit::pretrain(&cfg)?)
        }
        Command::Resume { checkpoint, train, print_config } => {
            let cfg = train_config(&train)?;
            if print_config {
                return print_toml(&cfg);
            }
            let ckpt = Checkpoint::load(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            report_training(trainkit::resume(&ckpt, &cfg)?)
        }
        Command::Gradcheck { loss, seed, eps, max_entries, threshold } => gradcheck(loss, seed, eps, max_entries, threshold),
        Command::EvalAlign { checkpoint, corpus, report } => eval_align(&checkpoint, &corpus, report.as_deref()),
        Command::Render { checkpoint, corpus, out, doc_ids } => render(&checkpoint, &corpus, &out, &doc_ids),
        Command::FinetuneNer { checkpoint, corpus, eval_fraction, finetune, save, print_config } => {
            let cfg = finetune_config(&finetune)?;
            if print_config {
                return print_toml(&cfg);
            }
            let (checkpoint, corpus) = (required(checkpoint, "--checkpoint")?, required(corpus, "--corpus")?);
            finetune_ner(&checkpoint, &corpus, eval_fraction, &cfg, save.as_deref())
        }
        Command::Classify { checkpoint, class_corpora, corpus, eval_fraction, finetune, save, print_config } => {
            let cfg = finetune_config(&finetune)?;
            if print_config {
                return print_toml(&cfg);
            }
            let checkpoint = required(checkpoint, "--checkpoint")?;
            match corpus {
                Some(corpus) => predict_classes(&checkpoint, &corpus),
                None => classify(&checkpoint, &class_corpora, eval_fraction, &cfg, save.as_deref()),
            }
        }
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Usage(format!("{flag} is required")).into())
}

fn print_toml<T: serde::Serialize>(value: &T) -> Result<u8> {
    print!("{}", toml::to_string_pretty(value)?);
    Ok(0)
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
}

fn train_config(flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = match &flags.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn finetune_config(flags: &FinetuneFlags) -> Result<FinetuneConfig> {
    let mut cfg = match &flags.config {
        Some(path) => read_toml(path)?,
        None => FinetuneConfig::default(),
    };
    flags.apply(&mut cfg);
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        bail!(Usage("epochs and batch_size must be at least 1".into()));
    }
    Ok(cfg)
}

fn gen(flags: &GenFlags, count: usize, out: Option<PathBuf>, print_config: bool) -> Result<u8> {
    let mut params = match &flags.config {
        Some(path) => read_toml(path)?,
        None => GenParams::default(),
    };
    flags.apply(&mut params);
    params.validate()?;
    if print_config {
        return print_toml(&params);
    }
    let out = required(out, "--out")?;
    if count == 0 {
        bail!(Usage("--count must be at least 1".into()));
    }
    generate_corpus(&params, count, &out)?;
    let manifest = fs::read(out.join(MANIFEST_FILE))?;
    let hash = hex::encode(Sha256::digest(&manifest));
    println!("{}", json!({ "out": out, "documents": count, "manifest_sha256": hash }));
    Ok(0)
}

fn report_training(outcome: trainkit::TrainOutcome) -> Result<u8> {
    let totals: Vec<f64> = outcome.records.iter().map(|r| r.report.total).collect();
    println!(
        "{}",
        json!({
            "steps": outcome.checkpoint.step,
            "checkpoint": outcome.checkpoint_path,
            "loss_curve": outcome.curve_path,
            "first_total": totals.first(),
            "last_total": totals.last(),
        })
    );
    Ok(0)
}

fn gradcheck(loss: LossArg, seed: u64, eps: f64, max_entries: usize, threshold: f64) -> Result<u8> {
    if !(eps > 0.0 && threshold > 0.0) {
        bail!(Usage("--eps and --threshold must be positive".into()));
    }
    let targets: Vec<GradTarget> = match loss {
        LossArg::Mlm => vec![GradTarget::Mlm],
        LossArg::Trc => vec![GradTarget::Trc],
        LossArg::Mrm => vec![GradTarget::Mrm],
        LossArg::Tgm => vec![GradTarget::Tgm],
        LossArg::Total => vec![GradTarget::Total],
        LossArg::All => GradTarget::ALL.to_vec(),
    };
    let opts = GradCheckOptions { eps, max_entries_per_param: (max_entries > 0).then_some(max_entries) };
    let mut failed = false;
    for target in targets {
        let report = check_gradients(target, seed, opts)?;
        let max = report.max_rel_err();
        let pass = max < threshold;
        failed |= !pass;
        println!(
            "{}",
            json!({ "loss": target.to_string(), "max_rel_err": max, "worst": report.worst(), "threshold": threshold, "pass": pass })
        );
    }
    Ok(if failed { exit::NUMERIC } else { 0 })
}

/// Loads a checkpoint and a corpus whose vocabulary matches the model.
fn model_and_corpus(checkpoint: &Path, corpus: &Path) -> Result<(Model, Corpus)> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let model = model_from_checkpoint(&ckpt)?;
    let corpus = load_corpus(corpus).with_context(|| format!("loading corpus {}", corpus.display()))?;
    check_vocab(&model, &corpus)?;
    Ok((model, corpus))
}

fn check_vocab(model: &Model, corpus: &Corpus) -> Result<()> {
    if corpus.vocab.len() != model.config.vocab_size {
        bail!(
            "corpus {} has {} vocabulary entries but the model expects {}",
            corpus.root.display(),
            corpus.vocab.len(),
            model.config.vocab_size
        );
    }
    Ok(())
}

fn eval_align(checkpoint: &Path, corpus: &Path, report_path: Option<&Path>) -> Result<u8> {
    let (model, corpus) = model_and_corpus(checkpoint, corpus)?;
    let report = alignment_accuracy(&model, &corpus.documents)?;
    if let Some(path) = report_path {
        fs::write(path, report.to_jsonl()).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "{}",
        json!({
            "documents": report.entries.len(),
            "accuracy": report.accuracy,
            "region_to_text_accuracy": report.region_to_text_accuracy,
            "random_baseline": report.random_baseline(),
        })
    );
    Ok(0)
}

fn render(checkpoint: &Path, corpus: &Path, out: &Path, doc_ids: &[String]) -> Result<u8> {
    let (model, corpus) = model_and_corpus(checkpoint, corpus)?;
    if let Some(missing) = doc_ids.iter().find(|id| !corpus.documents.iter().any(|d| &d.doc_id == *id)) {
        bail!("document {missing:?} is not in the corpus");
    }
    fs::create_dir_all(out)?;
    for doc in corpus.documents.iter().filter(|d| doc_ids.is_empty() || doc_ids.contains(&d.doc_id)) {
        let entry = document_alignment(&model, doc)?;
        let path = out.join(format!("{}.png", doc.doc_id));
        render_alignment(doc, &entry, &path)?;
        println!("{}", json!({ "doc_id": doc.doc_id, "path": path, "accuracy": entry.accuracy() }));
    }
    Ok(0)
}

/// Splits off the trailing `fraction` (at least one item, leaving at least one).
fn split<T>(items: &[T], fraction: f64) -> Result<(&[T], &[T])> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        bail!(Usage(format!("--eval-fraction must lie in (0, 1), got {fraction}")));
    }
    if items.len() < 2 {
        bail!("need at least two documents to split, got {}", items.len());
    }
    let n_eval = ((items.len() as f64 * fraction).round() as usize).clamp(1, items.len() - 1);
    Ok(items.split_at(items.len() - n_eval))
}

fn save_model(model: &Model, path: Option<&Path>) -> Result<()> {
    if let Some(path) = path {
        inference_checkpoint(model).save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn finetune_ner(checkpoint: &Path, corpus: &Path, eval_fraction: f64, cfg: &FinetuneConfig, save: Option<&Path>) -> Result<u8> {
    let (model, corpus) = model_and_corpus(checkpoint, corpus)?;
    let tags = TagSet::from_documents(&corpus.documents)?;
    let (train, eval) = split(&corpus.documents, eval_fraction)?;
    let outcome = finetune_token_classifier(&model, train, eval, &tags, cfg)?;
    save_model(&outcome.model, save)?;
    println!(
        "{}",
        json!({
            "train_documents": train.len(),
            "eval_documents": eval.len(),
            "tags": tags.labels(),
            "f1": outcome.f1(),
            "degenerate": outcome.degenerate,
            "counts": outcome.score,
            "final_loss": outcome.losses.last(),
        })
    );
    Ok(0)
}

fn classify(checkpoint: &Path, corpora: &[PathBuf], eval_fraction: f64, cfg: &FinetuneConfig, save: Option<&Path>) -> Result<u8> {
    if corpora.len() < 2 {
        bail!(Usage("give --class-corpus at least twice, or --corpus to predict".into()));
    }
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let model = model_from_checkpoint(&ckpt)?;
    let mut train: Vec<(Document, usize)> = Vec::new();
    let mut eval = Vec::new();
    for (label, root) in corpora.iter().enumerate() {
        let corpus = load_corpus(root).with_context(|| format!("loading corpus {}", root.display()))?;
        check_vocab(&model, &corpus)?;
        let (tr, ev) = split(&corpus.documents, eval_fraction)?;
        train.extend(tr.iter().map(|d| (d.clone(), label)));
        eval.extend(ev.iter().map(|d| (d.clone(), label)));
    }
    let outcome = finetune_document_classifier(&model, &train, &eval, corpora.len(), cfg)?;
    save_model(&outcome.model, save)?;
    println!(
        "{}",
        json!({
            "classes": corpora.len(),
            "train_documents": train.len(),
            "eval_documents": eval.len(),
            "accuracy": outcome.accuracy,
            "final_loss": outcome.losses.last(),
        })
    );
    Ok(0)
}

fn predict_classes(checkpoint: &Path, corpus: &Path) -> Result<u8> {
    let (model, corpus) = model_and_corpus(checkpoint, corpus)?;
    let n_classes = model
        .params
        .get("cls.w")
        .map(|w| w.shape()[1])
        .ok_or_else(|| anyhow!(Usage("checkpoint has no classification head; fine-tune with --class-corpus first".into())))?;
    for doc in &corpus.documents {
        let logits = classify_document(&model, doc, n_classes)?;
        let class = (0..logits.len()).fold(0, |best, k| if logits[k] > logits[best] { k } else { best });
        println!("{}", json!({ "doc_id": doc.doc_id, "logits": logits, "class": class }));
    }
    Ok(0)
}

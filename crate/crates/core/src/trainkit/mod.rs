//! Pre-training loop with deterministic batching, checkpoints, resume and
//! a per-step loss curve.

mod config;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::doclib::{load_corpus, Corpus, DocError, DocInputs};
use crate::encoders::{EncoderError, Model, ModelConfig};
use crate::numkit::{adam_step, schedule_lr, AdamState, Checkpoint, Graph, NumError, ParamStore};
use crate::objectives::{batch_losses, plan_document, LossReport, ObjectiveError, PlanConfig};
use crate::seed::derive_seed;

pub use config::{ablation_ladder, TrainConfig};

pub const CURVE_FILE: &str = "loss_curve.csv";
pub const CURVE_HEADER: &str = "step,mlm,trc,mrm,tgm,total,lr";

const INIT_TAG: u64 = 1;
const PASS_TAG: u64 = 2;
const PLAN_TAG: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint does not match config: {0}")]
    ConfigMismatch(String),
    #[error("non-finite loss at step {step}: {report:?}")]
    NonFinite { step: u64, report: Box<LossReport> },
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub report: LossReport,
    pub lr: f64,
}

impl StepRecord {
    /// CSV row; floats use the shortest representation that round-trips.
    pub fn csv(&self) -> String {
        let r = &self.report;
        format!("{},{},{},{},{},{},{}", self.step, r.mlm, r.trc, r.mrm, r.tgm, r.total, self.lr)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub curve_path: PathBuf,
    /// Records of the steps run by this call.
    pub records: Vec<StepRecord>,
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("checkpoint-{step:06}.ckpt"))
}

/// Model config with the vocabulary size taken from the corpus.
pub fn resolve_model_config(cfg: &TrainConfig, corpus: &Corpus) -> Result<ModelConfig, TrainError> {
    let vocab = corpus.vocab.len();
    let mut model = cfg.model.clone();
    if model.vocab_size == 0 {
        model.vocab_size = vocab;
    } else if model.vocab_size != vocab {
        return Err(TrainError::Config(format!("model vocab_size {} but corpus vocabulary has {vocab}", model.vocab_size)));
    }
    model.validate()?;
    Ok(model)
}

/// Model config as stored in checkpoints.
pub fn config_blob(model: &ModelConfig) -> String {
    serde_json::to_string(model).expect("model config serializes")
}

pub fn model_config_from_checkpoint(ckpt: &Checkpoint) -> Result<ModelConfig, TrainError> {
    serde_json::from_str(&ckpt.config).map_err(|e| TrainError::ConfigMismatch(format!("unreadable model config: {e}")))
}

/// Rebuilds a model from a checkpoint. Every parameter of a freshly
/// initialized model must be present with the same shape; extra entries
/// such as fine-tuned heads are kept.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model, TrainError> {
    let config = model_config_from_checkpoint(ckpt)?;
    let base = Model::init(config.clone(), 0)?;
    let mut params = ParamStore::new();
    for (name, value) in &ckpt.params {
        let decay = base.params.entries().iter().find(|e| e.name == *name).is_none_or(|e| e.decay);
        params.insert(name.clone(), value.clone(), decay)?;
    }
    for e in base.params.entries() {
        match params.get(&e.name) {
            Some(v) if v.shape() == e.value.shape() => {}
            _ => return Err(TrainError::ConfigMismatch(format!("checkpoint lacks parameter {} {:?}", e.name, e.value.shape()))),
        }
    }
    Ok(Model { config, params })
}

/// Checkpoint of a model outside training (no optimizer state).
pub fn inference_checkpoint(model: &Model) -> Checkpoint {
    Checkpoint {
        config: config_blob(&model.config),
        params: model.params.entries().iter().map(|e| (e.name.clone(), e.value.clone())).collect(),
        state: Vec::new(),
        step: 0,
    }
}

/// Document indices of batch `step` (1-based): consecutive slices of
/// shuffled passes over the corpus, each pass seeded by `(seed, pass)`.
pub fn batch_indices(seed: u64, n_docs: usize, batch: usize, step: u64) -> Vec<usize> {
    let mut perms: HashMap<usize, Vec<usize>> = HashMap::new();
    let step = step as usize;
    ((step - 1) * batch..step * batch)
        .map(|pos| {
            let pass = pos / n_docs;
            let perm = perms.entry(pass).or_insert_with(|| {
                let mut p: Vec<usize> = (0..n_docs).collect();
                p.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[PASS_TAG, pass as u64])));
                p
            });
            perm[pos % n_docs]
        })
        .collect()
}

/// Trains from freshly initialized parameters.
pub fn pretrain(cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let corpus = load_corpus(&cfg.corpus)?;
    let model_cfg = resolve_model_config(cfg, &corpus)?;
    let model = Model::init(model_cfg, derive_seed(cfg.seed, &[INIT_TAG]))?;
    let adam = AdamState::new(&model.params);
    fs::create_dir_all(&cfg.out_dir)?;
    let curve = cfg.out_dir.join(CURVE_FILE);
    fs::write(&curve, format!("{CURVE_HEADER}\n"))?;
    run(cfg, &corpus, model, adam, 0)
}

/// Continues training from `ckpt`. The model config must match exactly;
/// objective toggles and weights may differ.
pub fn resume(ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let corpus = load_corpus(&cfg.corpus)?;
    let wanted = resolve_model_config(cfg, &corpus)?;
    let stored = model_config_from_checkpoint(ckpt)?;
    if stored != wanted {
        return Err(TrainError::ConfigMismatch(format!("checkpoint {stored:?}, config {wanted:?}")));
    }
    let start = ckpt.step;
    if start > cfg.schedule.total_steps {
        return Err(TrainError::ConfigMismatch(format!(
            "checkpoint step {start} is past total_steps {}",
            cfg.schedule.total_steps
        )));
    }
    let mut model = Model::init(stored, 0)?;
    let adam = ckpt.restore_into(&mut model.params)?;
    log::info!("resuming at step {start} with objectives {:?}", cfg.objectives.enabled);
    fs::create_dir_all(&cfg.out_dir)?;
    truncate_curve(&cfg.out_dir.join(CURVE_FILE), start)?;
    run(cfg, &corpus, model, adam, start)
}

/// Keeps the header and rows up to `step`, creating the file if needed.
fn truncate_curve(path: &Path, step: u64) -> Result<(), TrainError> {
    let mut kept = format!("{CURVE_HEADER}\n");
    if path.exists() {
        for line in BufReader::new(File::open(path)?).lines().skip(1) {
            let line = line?;
            match line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
                Some(s) if s <= step => kept.push_str(&format!("{line}\n")),
                _ => {}
            }
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

fn run(cfg: &TrainConfig, corpus: &Corpus, mut model: Model, mut adam: AdamState, start: u64) -> Result<TrainOutcome, TrainError> {
    let total = cfg.schedule.total_steps;
    let inputs: Vec<DocInputs> = corpus
        .documents
        .iter()
        .map(|d| DocInputs::from_document(d, model.config.max_lines, model.config.max_tokens))
        .collect::<Result<_, _>>()?;
    let plan_cfg = PlanConfig {
        rates: cfg.objectives.rates,
        replacement_ids: corpus.vocab.regular_ids(),
        grid: model.config.grid,
    };
    let curve_path = cfg.out_dir.join(CURVE_FILE);
    let mut curve = OpenOptions::new().append(true).open(&curve_path)?;
    let blob = config_blob(&model.config);
    let mut records = Vec::new();
    let mut last_ckpt = None;

    for step in start + 1..=total {
        let lr = schedule_lr(step, &cfg.schedule)?;
        let docs = batch_indices(cfg.seed, corpus.documents.len(), cfg.batch_size, step)
            .into_iter()
            .enumerate()
            .map(|(slot, i)| {
                let seed = derive_seed(cfg.seed, &[PLAN_TAG, step, slot as u64]);
                plan_document(&corpus.documents[i], inputs[i].clone(), &plan_cfg, seed)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut g = Graph::new();
        let p = model.params.bind(&mut g);
        let (vars, report) = batch_losses(&mut g, &p, &model.config, &cfg.objectives, &docs)?;
        let record = StepRecord { step, report, lr };
        writeln!(curve, "{}", record.csv())?;
        if !report.is_finite() {
            curve.flush()?;
            return Err(TrainError::NonFinite { step, report: Box::new(report) });
        }
        let grads = p.collect_grads(&g.backward(vars.total));
        drop(g);
        adam_step(&mut model.params, &grads, &mut adam, lr, cfg.schedule.weight_decay)?;
        records.push(record);
        if step % 10 == 0 || step == total {
            log::info!("step {step}/{total} total {:.5} (mlm {:.4} trc {:.4} mrm {:.4} tgm {:.4}) lr {lr:.3e}", report.total, report.mlm, report.trc, report.mrm, report.tgm);
        }

        let interval_hit = cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval as u64 == 0;
        if interval_hit || step == total {
            let ckpt = Checkpoint::from_training(blob.clone(), &model.params, &adam);
            let path = checkpoint_path(&cfg.out_dir, step);
            ckpt.save(&path)?;
            last_ckpt = Some((ckpt, path));
        }
    }
    curve.flush()?;
    let (checkpoint, checkpoint_path) = match last_ckpt {
        Some(c) => c,
        None => {
            let ckpt = Checkpoint::from_training(blob, &model.params, &adam);
            let path = checkpoint_path(&cfg.out_dir, start);
            ckpt.save(&path)?;
            (ckpt, path)
        }
    };
    Ok(TrainOutcome { model, checkpoint, checkpoint_path, curve_path, records })
}

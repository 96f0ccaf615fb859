//! Textline-region alignment evaluation, overlay rendering, and small
//! downstream heads (BIO tagging, document classification).

mod align;
mod classify;
mod ner;
mod render;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doclib::DocError;
use crate::encoders::EncoderError;
use crate::numkit::{adam_step, schedule_lr, AdamState, BoundParams, Graph, NumError, ParamStore, ScheduleConfig, Tensor, Var};
use crate::trainkit::batch_indices;

pub use align::{align_features, alignment_accuracy, document_alignment, AlignmentEntry, AlignmentReport};
pub use classify::{add_class_head, class_logits, classify_document, finetune_document_classifier, ClassifierOutcome};
pub use ner::{
    entity_f1, extract_spans, finetune_token_classifier, predict_tags, token_labels, EntityScore, NerOutcome, Span, SpanCounts,
    TagSet,
};
pub use render::{render_alignment, CORRECT_COLOR, INCORRECT_COLOR};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("tag {0:?} is not in the declared tag set")]
    UnknownTag(String),
    #[error("report entry {entry:?} does not match document {doc:?}")]
    EntryMismatch { entry: String, doc: String },
    #[error("cannot encode overlay: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Optimizer settings shared by the fine-tuning heads. The whole model is
/// updated, not just the head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 4, peak_lr: 1e-3, warmup_fraction: 0.1, weight_decay: 1e-2, seed: 0 }
    }
}

impl FinetuneConfig {
    fn schedule(&self, n_items: usize) -> Result<ScheduleConfig, EvalError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(EvalError::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        let steps = (self.epochs * n_items.div_ceil(self.batch_size)).max(2) as u64;
        let cfg = ScheduleConfig {
            peak_lr: self.peak_lr,
            total_steps: steps,
            warmup_fraction: self.warmup_fraction,
            weight_decay: self.weight_decay,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Adds a linear head `name.w` `[din, dout]` ~ N(0, 0.02²) and a zero bias,
/// replacing any previous head of that name.
pub(crate) fn add_head(params: &mut ParamStore, name: &str, din: usize, dout: usize, seed: u64) -> Result<(), NumError> {
    let dist = Normal::new(0.0, 0.02).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(&[din, dout], (0..din * dout).map(|_| dist.sample(&mut rng)).collect())?;
    let mut fresh = ParamStore::new();
    for e in params.entries() {
        if e.name != format!("{name}.w") && e.name != format!("{name}.b") {
            fresh.insert(e.name.clone(), e.value.clone(), e.decay)?;
        }
    }
    fresh.insert(format!("{name}.w"), w, true)?;
    fresh.insert(format!("{name}.b"), Tensor::zeros(&[dout]), true)?;
    *params = fresh;
    Ok(())
}

/// Minibatch Adam over `n_items` examples; `loss` builds the batch loss
/// for the given item indices. Returns the per-step loss values.
pub(crate) fn finetune_loop(
    params: &mut ParamStore,
    n_items: usize,
    cfg: &FinetuneConfig,
    mut loss: impl FnMut(&mut Graph, &BoundParams, &[usize]) -> Result<Var, EvalError>,
) -> Result<Vec<f64>, EvalError> {
    if n_items == 0 {
        return Err(EvalError::InvalidConfig("no training examples".into()));
    }
    let schedule = cfg.schedule(n_items)?;
    let mut adam = AdamState::new(params);
    let mut values = Vec::with_capacity(schedule.total_steps as usize);
    for step in 1..=schedule.total_steps {
        let idx = batch_indices(cfg.seed, n_items, cfg.batch_size, step);
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let l = loss(&mut g, &p, &idx)?;
        let value = g.value(l).item();
        if !value.is_finite() {
            return Err(NumError::NonFinite(format!("fine-tuning loss at step {step}")).into());
        }
        values.push(value);
        let grads = p.collect_grads(&g.backward(l));
        drop(g);
        adam_step(params, &grads, &mut adam, schedule_lr(step, &schedule)?, schedule.weight_decay)?;
    }
    Ok(values)
}

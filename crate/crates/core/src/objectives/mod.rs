//! Pre-training objectives: masked language modeling, textline-region
//! contrast, masked region modeling and textline grid matching, plus the
//! planner that keeps their samples disjoint and the weighted total.

mod batch;
mod check;
mod losses;
mod plan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doclib::DocError;
use crate::encoders::EncoderError;
use crate::numkit::NumError;

pub use batch::{batch_losses, plan_document, LossVars, PlannedDoc};
pub use check::{check_gradients, micro_batch, micro_model_config, GradTarget};
pub use losses::{mlm_loss, mrm_loss, similarity_var, textline_similarity, tgm_loss, trc_loss, TgmBatch, TrcOptions};
pub use plan::{plan_masks, MaskPlan, MaskRates, MlmAction, MlmTarget, PageLevels, PlanConfig};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("document has no word tokens to plan over")]
    NoWordTokens,
    #[error("empty mask: {0}")]
    EmptyMask(&'static str),
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite {0} loss")]
    NonFinite(&'static str),
    #[error("invalid objective config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Doc(#[from] DocError),
}

/// One flag per objective, in the order MLM, TRC, MRM, TGM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveFlags {
    pub mlm: bool,
    pub trc: bool,
    pub mrm: bool,
    pub tgm: bool,
}

impl ObjectiveFlags {
    pub const ALL: Self = Self { mlm: true, trc: true, mrm: true, tgm: true };
    pub const NONE: Self = Self { mlm: false, trc: false, mrm: false, tgm: false };

    pub fn any(&self) -> bool {
        self.mlm || self.trc || self.mrm || self.tgm
    }
}

impl Default for ObjectiveFlags {
    fn default() -> Self {
        Self::ALL
    }
}

/// Weights of TRC, MRM and TGM relative to MLM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lambdas {
    pub trc: f64,
    pub mrm: f64,
    pub tgm: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self { trc: 0.2, mrm: 1.0, tgm: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub enabled: ObjectiveFlags,
    pub lambdas: Lambdas,
    pub rates: MaskRates,
    /// L2-normalize textline features before similarity.
    pub normalize_features: bool,
    /// Divisor applied to similarities inside the contrastive softmax.
    pub temperature: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            enabled: ObjectiveFlags::ALL,
            lambdas: Lambdas::default(),
            rates: MaskRates::default(),
            normalize_features: true,
            temperature: 1.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !self.enabled.any() {
            return Err(ObjectiveError::InvalidConfig("at least one objective must be enabled".into()));
        }
        let l = self.lambdas;
        if [l.trc, l.mrm, l.tgm].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ObjectiveError::InvalidConfig(format!("lambdas must be finite and non-negative: {l:?}")));
        }
        let r = self.rates;
        if [r.mlm, r.mrm, r.tgm, r.mrm_background].iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ObjectiveError::InvalidConfig(format!("rates must lie in [0, 1]: {r:?}")));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ObjectiveError::InvalidConfig(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }

    pub fn trc_options(&self) -> TrcOptions {
        TrcOptions { normalize: self.normalize_features, temperature: self.temperature }
    }
}

/// Scalar losses of one step. Disabled or skipped objectives read 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mlm: f64,
    pub trc: f64,
    pub mrm: f64,
    pub tgm: f64,
    pub total: f64,
    pub lambdas: Lambdas,
    /// Objectives that contributed to `total` (enabled and non-empty).
    pub active: ObjectiveFlags,
}

impl LossReport {
    /// `total = mlm + λ₁·trc + λ₂·mrm + λ₃·tgm`, evaluated in that order,
    /// without checking finiteness.
    pub fn compute(mlm: f64, trc: f64, mrm: f64, tgm: f64, lambdas: Lambdas) -> Self {
        let total = mlm + lambdas.trc * trc + lambdas.mrm * mrm + lambdas.tgm * tgm;
        Self { mlm, trc, mrm, tgm, total, lambdas, active: ObjectiveFlags::ALL }
    }

    pub fn is_finite(&self) -> bool {
        [self.mlm, self.trc, self.mrm, self.tgm, self.total].iter().all(|v| v.is_finite())
    }
}

/// [`LossReport::compute`] that rejects non-finite components.
pub fn total_loss(mlm: f64, trc: f64, mrm: f64, tgm: f64, lambdas: Lambdas) -> Result<LossReport, ObjectiveError> {
    for (name, v) in [("mlm", mlm), ("trc", trc), ("mrm", mrm), ("tgm", tgm)] {
        if !v.is_finite() {
            return Err(ObjectiveError::NonFinite(name));
        }
    }
    Ok(LossReport::compute(mlm, trc, mrm, tgm, lambdas))
}

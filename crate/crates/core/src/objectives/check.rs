//! End-to-end gradient verification of the objectives on a micro-batch.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{batch_losses, plan_document, MaskRates, ObjectiveConfig, ObjectiveError, ObjectiveFlags, PlanConfig, PlannedDoc};
use crate::docgen::{build_vocab, generate_document, GenParams};
use crate::doclib::{DocInputs, GridConfig};
use crate::encoders::{Model, ModelConfig};
use crate::numkit::{grad_check, GradCheckOptions, GradCheckReport};
use crate::seed::derive_seed;

/// Which loss a gradient check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTarget {
    Mlm,
    Trc,
    Mrm,
    Tgm,
    Total,
}

impl GradTarget {
    pub const ALL: [GradTarget; 5] = [Self::Mlm, Self::Trc, Self::Mrm, Self::Tgm, Self::Total];

    fn flags(self) -> ObjectiveFlags {
        let none = ObjectiveFlags::NONE;
        match self {
            Self::Mlm => ObjectiveFlags { mlm: true, ..none },
            Self::Trc => ObjectiveFlags { trc: true, ..none },
            Self::Mrm => ObjectiveFlags { mrm: true, ..none },
            Self::Tgm => ObjectiveFlags { tgm: true, ..none },
            Self::Total => ObjectiveFlags::ALL,
        }
    }
}

impl fmt::Display for GradTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mlm => "mlm",
            Self::Trc => "trc",
            Self::Mrm => "mrm",
            Self::Tgm => "tgm",
            Self::Total => "total",
        })
    }
}

impl FromStr for GradTarget {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| ObjectiveError::InvalidConfig(format!("unknown loss {s:?}; expected mlm, trc, mrm, tgm or total")))
    }
}

/// Model used for gradient checks: every component present, all widths tiny.
pub fn micro_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        text_layers: 1,
        fusion_layers: 1,
        heads: 2,
        ffn_dim: 16,
        vocab_size,
        conv_channels: [2, 2, 4, 4],
        grid: GridConfig { rows: 3, cols: 3 },
        max_lines: 8,
        ..ModelConfig::default()
    }
}

/// Standard deviation of the noise added to every micro-model parameter.
/// At initialization the cross-modal paths carry gradients around 1e-8,
/// below what finite differences resolve; a generic point avoids that.
const MICRO_JITTER: f64 = 0.1;

/// A micro model at a random point plus two generated four-line documents
/// with a mask plan that gives every objective at least one sample.
pub fn micro_batch(seed: u64) -> Result<(Model, Vec<PlannedDoc>), ObjectiveError> {
    let params = GenParams { seed, vocab_size: 16, lines_range: [4, 4], words_per_line_range: [2, 3], ..GenParams::default() };
    let vocab = build_vocab(&params);
    let mut model = Model::init(micro_model_config(vocab.len()), derive_seed(seed, &[1]))?;
    let noise = Normal::new(0.0, MICRO_JITTER).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3]));
    for e in model.params.entries_mut() {
        for v in e.value.data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let plan_cfg = PlanConfig { rates: MaskRates { mlm: 0.5, ..MaskRates::default() }, replacement_ids: vocab.regular_ids(), grid: model.config.grid };
    let mut docs = Vec::new();
    for i in 0..2 {
        let doc = generate_document(&params, i).map_err(|e| ObjectiveError::InvalidConfig(e.to_string()))?;
        let inputs = DocInputs::from_document(&doc, model.config.max_lines, model.config.max_tokens)?;
        let planned = (0..64)
            .map(|attempt| plan_document(&doc, inputs.clone(), &plan_cfg, derive_seed(seed, &[2, i, attempt])))
            .find(|p| p.as_ref().map_or(true, |p| !p.plan.mlm.is_empty() && !p.plan.mrm_pixels.is_empty() && !p.plan.tgm_positions.is_empty()))
            .ok_or(ObjectiveError::EmptyMask("no seed gave every objective a sample"))??;
        docs.push(planned);
    }
    Ok((model, docs))
}

/// Finite-difference check of one loss through every parameter it touches.
pub fn check_gradients(target: GradTarget, seed: u64, opts: GradCheckOptions) -> Result<GradCheckReport, ObjectiveError> {
    let (model, docs) = micro_batch(seed)?;
    let cfg = ObjectiveConfig { enabled: target.flags(), ..ObjectiveConfig::default() };
    let report = grad_check(
        |g, p| -> Result<_, ObjectiveError> {
            let (vars, _) = batch_losses(g, p, &model.config, &cfg, &docs)?;
            Ok(vars.total)
        },
        &model.params,
        opts,
    )?;
    Ok(report)
}

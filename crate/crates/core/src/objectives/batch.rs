use super::{mlm_loss, mrm_loss, plan_masks, tgm_loss, trc_loss, LossReport, MaskPlan, ObjectiveConfig, ObjectiveError, ObjectiveFlags, PageLevels, PlanConfig, TgmBatch};
use crate::doclib::{DocInputs, Document};
use crate::encoders::{decode_image_regions, forward_document, BatchFeatures, ModelConfig, TextInputs, VISUAL_TOKENS};
use crate::numkit::nn::linear;
use crate::numkit::{BoundParams, Graph, Tensor, Var};

/// A document with its mask plan and the corrupted inputs the model sees.
#[derive(Clone, Debug)]
pub struct PlannedDoc {
    pub inputs: DocInputs,
    pub plan: MaskPlan,
    pub original: Tensor,
    pub text: TextInputs,
    pub image: Tensor,
}

pub fn plan_document(doc: &Document, inputs: DocInputs, cfg: &PlanConfig, seed: u64) -> Result<PlannedDoc, ObjectiveError> {
    let levels = PageLevels::estimate(&doc.image);
    let plan = plan_masks(&inputs, &doc.image, &levels, cfg, seed)?;
    let (text, image) = plan.apply(&inputs, &doc.image, &levels);
    Ok(PlannedDoc { inputs, plan, original: doc.image.clone(), text, image })
}

/// Graph handles of the per-objective losses; `None` when disabled or
/// skipped for lack of samples.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub mlm: Option<Var>,
    pub trc: Option<Var>,
    pub mrm: Option<Var>,
    pub tgm: Option<Var>,
    pub total: Var,
}

/// Forward pass of a pre-training batch and all enabled objectives.
pub fn batch_losses(
    g: &mut Graph,
    p: &BoundParams,
    model: &ModelConfig,
    cfg: &ObjectiveConfig,
    docs: &[PlannedDoc],
) -> Result<(LossVars, LossReport), ObjectiveError> {
    if docs.is_empty() {
        return Err(ObjectiveError::InvalidConfig("empty batch".into()));
    }
    let on = cfg.enabled;
    let fuse = on.mlm || on.tgm;
    let mut feats = Vec::with_capacity(docs.len());
    for d in docs {
        feats.push(forward_document(g, p, model, &d.image, &d.text, &d.inputs.line_bboxes, fuse)?);
    }

    let mut mlm = None;
    if on.mlm {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (d, f) in docs.iter().zip(&feats) {
            if d.plan.mlm.is_empty() {
                continue;
            }
            let idx: Vec<usize> = d.plan.mlm.iter().map(|t| VISUAL_TOKENS + t.position).collect();
            rows.push(g.gather_rows(f.fused.expect("fused features"), &idx));
            labels.extend(d.plan.mlm.iter().map(|t| t.label));
        }
        if !rows.is_empty() {
            let h = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) };
            let logits = linear(g, h, p.get("mlm.w"), p.get("mlm.b"));
            mlm = Some(mlm_loss(g, logits, &labels)?);
        }
    }

    let trc = if on.trc {
        let batch = BatchFeatures {
            rho: feats.iter().map(|f| f.rho).collect(),
            tau: feats.iter().map(|f| f.tau).collect(),
            pad_mask: feats.iter().map(|f| f.pad_mask.clone()).collect(),
        };
        Some(trc_loss(g, &batch, cfg.trc_options())?)
    } else {
        None
    };

    let mut mrm = None;
    if on.mrm {
        for (d, f) in docs.iter().zip(&feats) {
            if d.plan.mrm_pixels.is_empty() {
                continue;
            }
            let recon = decode_image_regions(g, p, f.feature_map)?;
            let l = mrm_loss(g, recon, &d.original, &d.plan.mrm_pixel_mask())?;
            mrm = Some(match mrm {
                Some(acc) => g.add(acc, l),
                None => l,
            });
        }
    }

    let tgm = if on.tgm {
        let mut batch = TgmBatch { logits: Vec::new(), labels: Vec::new() };
        for (d, f) in docs.iter().zip(&feats) {
            let logits = (!d.plan.tgm_positions.is_empty()).then(|| {
                let idx: Vec<usize> = d.plan.tgm_positions.iter().map(|&t| VISUAL_TOKENS + t).collect();
                let h = g.gather_rows(f.fused.expect("fused features"), &idx);
                linear(g, h, p.get("tgm.w"), p.get("tgm.b"))
            });
            batch.logits.push(logits);
            batch.labels.push(d.plan.tgm_labels.clone());
        }
        tgm_loss(g, &batch)?
    } else {
        None
    };

    let value = |g: &Graph, v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
    let mut report = LossReport::compute(value(g, mlm), value(g, trc), value(g, mrm), value(g, tgm), cfg.lambdas);
    report.active = ObjectiveFlags { mlm: mlm.is_some(), trc: trc.is_some(), mrm: mrm.is_some(), tgm: tgm.is_some() };

    let mut total: Option<Var> = mlm;
    for (v, lambda) in [(trc, cfg.lambdas.trc), (mrm, cfg.lambdas.mrm), (tgm, cfg.lambdas.tgm)] {
        if let Some(v) = v {
            let w = g.scale(v, lambda);
            total = Some(match total {
                Some(t) => g.add(t, w),
                None => w,
            });
        }
    }
    let total = total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)));
    Ok((LossVars { mlm, trc, mrm, tgm, total }, report))
}

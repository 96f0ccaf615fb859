use super::ObjectiveError;
use crate::encoders::BatchFeatures;
use crate::numkit::{Graph, Tensor, Var};

fn real_rows(mask: &[bool]) -> Vec<usize> {
    (0..mask.len()).filter(|&i| mask[i]).collect()
}

/// Average-of-row-maxima similarity on the graph: mean over real rows of
/// `a` of the largest dot product with any real row of `b`. Both inputs are
/// expected to be normalized already when a bounded score is wanted.
pub fn similarity_var(g: &mut Graph, a: Var, b: Var, mask_a: &[bool], mask_b: &[bool]) -> Result<Var, ObjectiveError> {
    let (ra, rb) = (real_rows(mask_a), real_rows(mask_b));
    if ra.is_empty() || rb.is_empty() {
        return Err(ObjectiveError::EmptyMask("similarity needs a real line on each side"));
    }
    let a = g.gather_rows(a, &ra);
    let b = g.gather_rows(b, &rb);
    let dots = g.matmul_bt(a, b);
    let best = g.row_max(dots);
    Ok(g.mean(best))
}

/// `s(ρ_m, τ_n)`: rows are L2-normalized, then each real line of `rho`
/// takes its best match among the real lines of `tau`, averaged.
pub fn textline_similarity(rho: &Tensor, tau: &Tensor, mask_rho: &[bool], mask_tau: &[bool]) -> Result<f64, ObjectiveError> {
    let mut g = Graph::new();
    let a = g.constant(rho.clone());
    let b = g.constant(tau.clone());
    let a = g.l2_normalize(a);
    let b = g.l2_normalize(b);
    let s = similarity_var(&mut g, a, b, mask_rho, mask_tau)?;
    Ok(g.value(s).item())
}

/// Options of the contrastive term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrcOptions {
    /// L2-normalize line features before taking dot products.
    pub normalize: bool,
    /// Similarities are divided by this before the softmax; 1 leaves them as is.
    pub temperature: f64,
}

impl Default for TrcOptions {
    fn default() -> Self {
        Self { normalize: true, temperature: 1.0 }
    }
}

/// `½ Σ_m [L(ρ_m, τ_{1:N}) + L(τ_m, ρ_{1:N})]` where each directional term is
/// `-(1/N) log softmax_n(s)[m]`. The image→text score of `(m, n)` averages,
/// over the lines of `ρ_m`, the best match in `τ_n`; the text→image score
/// averages, over the lines of `τ_m`, the best match in `ρ_n`.
pub fn trc_loss(g: &mut Graph, batch: &BatchFeatures, opts: TrcOptions) -> Result<Var, ObjectiveError> {
    let n = batch.rho.len();
    if n == 0 || batch.tau.len() != n || batch.pad_mask.len() != n {
        return Err(ObjectiveError::InvalidConfig("batch features must have one entry per document".into()));
    }
    let prep = |g: &mut Graph, v: Var| if opts.normalize { g.l2_normalize(v) } else { v };
    let rho: Vec<Var> = batch.rho.iter().map(|&v| prep(g, v)).collect();
    let tau: Vec<Var> = batch.tau.iter().map(|&v| prep(g, v)).collect();
    let masks = &batch.pad_mask;

    let mut terms = Vec::with_capacity(2 * n);
    for m in 0..n {
        for (queries, keys) in [(&rho, &tau), (&tau, &rho)] {
            let mut scores = Vec::with_capacity(n);
            for k in 0..n {
                let s = similarity_var(g, queries[m], keys[k], &masks[m], &masks[k])?;
                scores.push(g.reshape(s, &[1, 1])?);
            }
            let logits = if n == 1 { scores[0] } else { g.concat_cols(&scores) };
            let logits = if opts.temperature == 1.0 { logits } else { g.scale(logits, 1.0 / opts.temperature) };
            terms.push(g.cross_entropy_mean(logits, &[m], &[false])?);
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t);
    }
    Ok(g.scale(total, 0.5 / n as f64))
}

/// Mean cross-entropy of MLM logits `[k, V]` against the original ids.
pub fn mlm_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var, ObjectiveError> {
    let (_, v) = g.value(logits).dims2();
    if let Some(&bad) = labels.iter().find(|&&l| l >= v) {
        return Err(ObjectiveError::LabelOutOfRange { label: bad, classes: v });
    }
    Ok(g.cross_entropy_mean(logits, labels, &vec![false; labels.len()])?)
}

/// Mean absolute reconstruction error over the scored pixels.
pub fn mrm_loss(g: &mut Graph, reconstruction: Var, original: &Tensor, pixel_mask: &[bool]) -> Result<Var, ObjectiveError> {
    Ok(g.l1_masked_mean(reconstruction, original, pixel_mask)?)
}

/// Grid logits and labels of the TGM tokens, per document.
#[derive(Clone, Debug)]
pub struct TgmBatch {
    /// `[T_n, G]` logits per document; `None` where no line was selected.
    pub logits: Vec<Option<Var>>,
    pub labels: Vec<Vec<usize>>,
}

/// `(1/N) Σ_n Σ_{l,t} CE(y_{l,t}, g_{l,t})` with `N` counting every
/// document of the batch. Returns `None` when no document has TGM tokens.
pub fn tgm_loss(g: &mut Graph, batch: &TgmBatch) -> Result<Option<Var>, ObjectiveError> {
    let n = batch.logits.len();
    let mut total: Option<Var> = None;
    for (logits, labels) in batch.logits.iter().zip(&batch.labels) {
        let Some(logits) = *logits else { continue };
        let (rows, classes) = g.value(logits).dims2();
        if classes < 2 {
            return Err(ObjectiveError::InvalidConfig(format!("grid needs at least two cells, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(ObjectiveError::LabelOutOfRange { label: bad, classes });
        }
        let mean = g.cross_entropy_mean(logits, labels, &vec![false; rows])?;
        let sum = g.scale(mean, rows as f64);
        total = Some(match total {
            Some(t) => g.add(t, sum),
            None => sum,
        });
    }
    Ok(total.map(|t| g.scale(t, 1.0 / n as f64)))
}

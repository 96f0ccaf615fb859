use super::{transformer_layer, EncoderError, ModelConfig, TextInputs, LAYOUT_TABLES, LN_EPS};
use crate::doclib::BBox;
use crate::numkit::{BoundParams, Graph, Tensor, Var};

/// Largest relative distance with its own bucket range, per axis.
const MAX_DISTANCE_1D: u64 = 128;
const MAX_DISTANCE_2D: u64 = 256;

/// Bidirectional log-spaced bucket of a relative offset. Half the buckets
/// hold non-positive offsets and half positive ones; within each half the
/// first quarter of buckets is exact and the rest grow logarithmically up
/// to `max_distance`, beyond which offsets share the last bucket.
pub fn relative_bucket(delta: i64, buckets: usize, max_distance: u64) -> usize {
    let half = buckets / 2;
    let base = if delta > 0 { half } else { 0 };
    let n = delta.unsigned_abs();
    let exact = (half / 2).max(1) as u64;
    if n < exact {
        return base + n as usize;
    }
    let span = (half as u64 - exact) as f64;
    let scaled = ((n as f64 / exact as f64).ln() / (max_distance as f64 / exact as f64).ln() * span) as u64;
    base + (exact + scaled).min(half as u64 - 1) as usize
}

/// Token + 1D position + six layout tables + segment embeddings, summed.
pub fn embed_text_inputs(g: &mut Graph, p: &BoundParams, text: &TextInputs, cfg: &ModelConfig) -> Result<Var, EncoderError> {
    text.check(cfg)?;
    let b = &text.bboxes;
    let coords: [Vec<usize>; 6] = [
        b.iter().map(|b| b.x0 as usize).collect(),
        b.iter().map(|b| b.y0 as usize).collect(),
        b.iter().map(|b| b.x1 as usize).collect(),
        b.iter().map(|b| b.y1 as usize).collect(),
        b.iter().map(|b| b.width() as usize).collect(),
        b.iter().map(|b| b.height() as usize).collect(),
    ];
    let mut sum = g.embedding(p.get("txt.tok_emb"), &text.token_ids)?;
    let pos = g.embedding(p.get("txt.pos_emb"), &text.positions)?;
    sum = g.add(sum, pos);
    for (name, ids) in LAYOUT_TABLES.iter().zip(&coords) {
        let e = g.embedding(p.get(&format!("txt.{name}_emb")), ids)?;
        sum = g.add(sum, e);
    }
    let seg = g.embedding(p.get("txt.seg_emb"), &text.segment_ids)?;
    Ok(g.add(sum, seg))
}

/// Per-head `[T, T]` additive attention biases from the relative 1D
/// position and the relative `x0` / `y0` layout offsets of each token pair.
pub fn spatial_bias(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, positions: &[usize], bboxes: &[BBox]) -> Vec<Var> {
    let t = positions.len();
    let nb = cfg.bias_buckets;
    let pair_ids = |f: &dyn Fn(usize, usize) -> i64, max: u64| -> Vec<usize> {
        (0..t * t).map(|ij| relative_bucket(f(ij / t, ij % t), nb, max)).collect()
    };
    let d1 = pair_ids(&|i, j| positions[j] as i64 - positions[i] as i64, MAX_DISTANCE_1D);
    let dx = pair_ids(&|i, j| bboxes[j].x0 as i64 - bboxes[i].x0 as i64, MAX_DISTANCE_2D);
    let dy = pair_ids(&|i, j| bboxes[j].y0 as i64 - bboxes[i].y0 as i64, MAX_DISTANCE_2D);
    let mut total = g.embedding(p.get("txt.bias_1d"), &d1).expect("bucket ids are in range");
    for (table, ids) in [("txt.bias_x", &dx), ("txt.bias_y", &dy)] {
        let e = g.embedding(p.get(table), ids).expect("bucket ids are in range");
        total = g.add(total, e);
    }
    (0..cfg.heads)
        .map(|h| {
            let col = g.slice_cols(total, h, 1);
            g.reshape(col, &[t, t]).expect("t*t elements")
        })
        .collect()
}

/// Layer-normalized embeddings through the text transformer stack. With
/// `spatial` off the layers attend without positional biases.
pub fn encode_text(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    embedded: Var,
    text: &TextInputs,
    spatial: bool,
) -> Result<Var, EncoderError> {
    if g.shape(embedded) != [text.len(), cfg.hidden_dim] {
        return Err(EncoderError::Input(format!("embedded shape {:?}", g.shape(embedded))));
    }
    let mut x = g.layer_norm(embedded, p.get("txt.emb_ln.g"), p.get("txt.emb_ln.b"), LN_EPS);
    let bias = spatial.then(|| spatial_bias(g, p, cfg, &text.positions, &text.bboxes));
    for i in 0..cfg.text_layers {
        x = transformer_layer(g, p, &format!("txt.layer{i}"), cfg.heads, x, bias.as_deref());
    }
    Ok(x)
}

/// Mean token feature per line slot. Returns `[lines, d]` and the mask of
/// slots that received at least one token; other rows are exactly zero.
pub fn pool_textline_text(g: &mut Graph, features: Var, membership: &[Option<usize>], lines: usize) -> (Var, Vec<bool>) {
    let (t, d) = g.value(features).dims2();
    assert_eq!(membership.len(), t, "membership length");
    let mut counts = vec![0usize; lines];
    for &l in membership.iter().flatten() {
        counts[l] += 1;
    }
    let mask: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    if !mask.iter().any(|&m| m) {
        return (g.constant(Tensor::zeros(&[lines, d])), mask);
    }
    let mut avg = vec![0.0; lines * t];
    for (j, m) in membership.iter().enumerate() {
        if let Some(l) = *m {
            avg[l * t + j] = 1.0 / counts[l] as f64;
        }
    }
    let avg = g.constant(Tensor::new(&[lines, t], avg).expect("lines x tokens"));
    (g.matmul(avg, features), mask)
}

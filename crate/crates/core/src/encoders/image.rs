use super::{EncoderError, DECODER_LAYERS};
use crate::doclib::{BBox, IMAGE_SIZE, LAYOUT_MAX};
use crate::numkit::nn::linear;
use crate::numkit::{BoundParams, Graph, Tensor, Var};

/// Side of the backbone feature map (224 / 2⁴).
pub const FEATURE_SIZE: usize = 14;
const POOLED: usize = 7;

/// Four stride-2 convolutions (GELU after each) to a `[C, 14, 14]` map,
/// then 7×7 adaptive pooling and a linear projection to `[49, d]`.
pub fn encode_image(g: &mut Graph, p: &BoundParams, image: Var) -> Result<(Var, Var), EncoderError> {
    if g.shape(image) != [1, IMAGE_SIZE, IMAGE_SIZE] {
        return Err(EncoderError::Input(format!("image shape {:?}, expected [1, {IMAGE_SIZE}, {IMAGE_SIZE}]", g.shape(image))));
    }
    let mut x = image;
    for i in 0..4 {
        x = g.conv2d(x, p.get(&format!("img.conv{i}.w")), p.get(&format!("img.conv{i}.b")), 2, 1)?;
        x = g.gelu(x);
    }
    let feature_map = x;
    let c = g.shape(feature_map)[0];
    let pooled = g.adaptive_avg_pool(feature_map, POOLED, POOLED)?;
    let pooled = g.reshape(pooled, &[c, POOLED * POOLED])?;
    let tokens = g.transpose(pooled);
    let tokens = linear(g, tokens, p.get("img.proj.w"), p.get("img.proj.b"));
    Ok((feature_map, tokens))
}

/// Feature-map cells `[r0, r1) × [c0, c1)` covered by a layout box scaled by
/// 14/1000, expanded to at least one cell.
pub fn roi_cells(b: &BBox) -> (usize, usize, usize, usize) {
    let n = FEATURE_SIZE;
    let m = LAYOUT_MAX as usize;
    let lo = |c: u32| (c as usize * n / m).min(n - 1);
    let hi = |c: u32, lo: usize| (c as usize * n).div_ceil(m).clamp(lo + 1, n);
    let (r0, c0) = (lo(b.y0), lo(b.x0));
    (r0, hi(b.y1, r0), c0, hi(b.x1, c0))
}

/// `[real.len(), 196]` averaging weights over each line's covered cells.
fn pool_matrix(line_bboxes: &[BBox], real: &[usize]) -> Vec<f64> {
    let cells = FEATURE_SIZE * FEATURE_SIZE;
    let mut pool = vec![0.0; real.len() * cells];
    for (r, &l) in real.iter().enumerate() {
        let (r0, r1, c0, c1) = roi_cells(&line_bboxes[l]);
        let w = 1.0 / ((r1 - r0) * (c1 - c0)) as f64;
        for y in r0..r1 {
            for x in c0..c1 {
                pool[r * cells + y * FEATURE_SIZE + x] = w;
            }
        }
    }
    pool
}

/// Average of the covered cells per real line, through the two-layer RoI
/// head. Padded slots come out as exact zero rows.
pub fn roi_pool_textlines(
    g: &mut Graph,
    p: &BoundParams,
    feature_map: Var,
    line_bboxes: &[BBox],
    pad_mask: &[bool],
) -> Result<Var, EncoderError> {
    let lines = line_bboxes.len();
    if pad_mask.len() != lines {
        return Err(EncoderError::Input(format!("{} boxes but {} mask entries", lines, pad_mask.len())));
    }
    let d = g.shape(p.get("roi.fc2.w"))[1];
    let real: Vec<usize> = (0..lines).filter(|&l| pad_mask[l]).collect();
    if real.is_empty() {
        return Ok(g.constant(Tensor::zeros(&[lines, d])));
    }
    let s = g.shape(feature_map).to_vec();
    if s[1..] != [FEATURE_SIZE, FEATURE_SIZE] {
        return Err(EncoderError::Input(format!("feature map {s:?}")));
    }
    let cells = FEATURE_SIZE * FEATURE_SIZE;
    let pool = pool_matrix(line_bboxes, &real);
    let pool = g.constant(Tensor::new(&[real.len(), cells], pool).expect("pool matrix"));
    let flat = g.reshape(feature_map, &[s[0], cells])?;
    let flat = g.transpose(flat);
    let pooled = g.matmul(pool, flat);
    let h = linear(g, pooled, p.get("roi.fc1.w"), p.get("roi.fc1.b"));
    let h = g.gelu(h);
    let out = linear(g, h, p.get("roi.fc2.w"), p.get("roi.fc2.b"));
    Ok(g.scatter_rows(out, &real, lines))
}

/// Three transposed convolutions, 14→28→56→224, GELU between them and a
/// linear output.
pub fn decode_image_regions(g: &mut Graph, p: &BoundParams, feature_map: Var) -> Result<Var, EncoderError> {
    let mut x = feature_map;
    for (i, &(k, stride)) in DECODER_LAYERS.iter().enumerate() {
        if i > 0 {
            x = g.gelu(x);
        }
        let pad = (k - stride) / 2;
        x = g.conv_transpose2d(x, p.get(&format!("dec.deconv{i}.w")), p.get(&format!("dec.deconv{i}.b")), stride, pad)?;
    }
    Ok(x)
}

use super::{transformer_layer, EncoderError, ModelConfig, LAYOUT_TABLES};
use crate::doclib::{BBox, GridConfig};
use crate::numkit::{BoundParams, Graph, Var};

/// Visual tokens per page (7×7 pooled cells).
pub const VISUAL_TOKENS: usize = 49;

/// Layout boxes of the 7×7 visual-token cells, row-major.
pub fn visual_cell_boxes() -> Vec<BBox> {
    let grid = GridConfig::default();
    (0..VISUAL_TOKENS).map(|i| grid.cell_box(i)).collect()
}

/// Adds 1D positions `0..49`, cell-box layout embeddings and the visual
/// segment embedding to the visual tokens, prepends them to the text
/// features and runs the fusion stack. Output rows: visual block, then text.
pub fn encode_multimodal(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    visual_tokens: Var,
    text_features: Var,
) -> Result<Var, EncoderError> {
    if g.shape(visual_tokens) != [VISUAL_TOKENS, cfg.hidden_dim] || g.shape(text_features)[1] != cfg.hidden_dim {
        return Err(EncoderError::Input(format!(
            "visual {:?}, text {:?}",
            g.shape(visual_tokens),
            g.shape(text_features)
        )));
    }
    let boxes = visual_cell_boxes();
    let positions: Vec<usize> = (0..VISUAL_TOKENS).collect();
    let coords: [Vec<usize>; 6] = [
        boxes.iter().map(|b| b.x0 as usize).collect(),
        boxes.iter().map(|b| b.y0 as usize).collect(),
        boxes.iter().map(|b| b.x1 as usize).collect(),
        boxes.iter().map(|b| b.y1 as usize).collect(),
        boxes.iter().map(|b| b.width() as usize).collect(),
        boxes.iter().map(|b| b.height() as usize).collect(),
    ];
    let mut v = visual_tokens;
    let pos = g.embedding(p.get("txt.pos_emb"), &positions)?;
    v = g.add(v, pos);
    for (name, ids) in LAYOUT_TABLES.iter().zip(&coords) {
        let e = g.embedding(p.get(&format!("txt.{name}_emb")), ids)?;
        v = g.add(v, e);
    }
    let seg = g.embedding(p.get("txt.seg_emb"), &[1; VISUAL_TOKENS])?;
    v = g.add(v, seg);
    let mut x = g.concat_rows(&[v, text_features]);
    for i in 0..cfg.fusion_layers {
        x = transformer_layer(g, p, &format!("fus.layer{i}"), cfg.heads, x, None);
    }
    Ok(x)
}

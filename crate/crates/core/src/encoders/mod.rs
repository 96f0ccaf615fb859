//! Dual-stream encoders (image, text), RoI head, image decoder and the
//! multimodal fusion encoder.
//!
//! Every function here records onto a caller-supplied [`Graph`] using
//! parameters bound from a [`Model`]'s store, so the same code serves
//! training, evaluation and gradient checks.

mod fusion;
mod image;
mod text;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doclib::{BBox, DocInputs, GridConfig, MAX_LINES, MAX_TOKENS};
use crate::numkit::{BoundParams, Graph, NumError, ParamStore, Tensor, Var};

pub use self::fusion::{encode_multimodal, visual_cell_boxes, VISUAL_TOKENS};
pub use self::image::{decode_image_regions, encode_image, roi_cells, roi_pool_textlines, FEATURE_SIZE};
pub use self::text::{embed_text_inputs, encode_text, pool_textline_text, relative_bucket, spatial_bias};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub text_layers: usize,
    pub fusion_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Output channels of the four stride-2 convolution stages.
    pub conv_channels: [usize; 4],
    pub grid: GridConfig,
    pub max_lines: usize,
    pub max_tokens: usize,
    /// Relative-position buckets per axis for spatial attention biases.
    pub bias_buckets: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            text_layers: 2,
            fusion_layers: 2,
            heads: 4,
            ffn_dim: 256,
            vocab_size: 0,
            conv_channels: [8, 16, 32, 32],
            grid: GridConfig::default(),
            max_lines: MAX_LINES,
            max_tokens: MAX_TOKENS,
            bias_buckets: 32,
        }
    }
}

impl ModelConfig {
    /// Checks the shape constraints needed to build a model. A fusion depth
    /// of zero passes here; [`ModelConfig::validate`] rejects it.
    pub fn check_shapes(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.hidden_dim == 0 || self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return bad(format!("hidden_dim {} must be a positive multiple of heads {}", self.hidden_dim, self.heads));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be set".into());
        }
        if self.ffn_dim == 0 || self.conv_channels.contains(&0) {
            return bad("ffn_dim and conv channels must be positive".into());
        }
        if self.grid.cells() < 2 {
            return bad(format!("grid {}x{} has fewer than two cells", self.grid.rows, self.grid.cols));
        }
        if self.max_lines == 0 || self.max_tokens < VISUAL_TOKENS.max(2) {
            return bad(format!("max_tokens must be at least {VISUAL_TOKENS} and max_lines positive"));
        }
        if self.bias_buckets < 4 || self.bias_buckets % 2 != 0 {
            return bad(format!("bias_buckets {} must be an even number >= 4", self.bias_buckets));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        self.check_shapes()?;
        if self.text_layers == 0 || self.fusion_layers == 0 {
            return Err(EncoderError::InvalidConfig("text_layers and fusion_layers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

/// Text-stream inputs for one document.
#[derive(Clone, Debug, PartialEq)]
pub struct TextInputs {
    pub token_ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub bboxes: Vec<BBox>,
    pub segment_ids: Vec<usize>,
    pub membership: Vec<Option<usize>>,
}

impl TextInputs {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    fn check(&self, cfg: &ModelConfig) -> Result<(), EncoderError> {
        let t = self.len();
        if t == 0 || t > cfg.max_tokens {
            return Err(EncoderError::Input(format!("{t} tokens, expected 1..={}", cfg.max_tokens)));
        }
        if [self.positions.len(), self.bboxes.len(), self.segment_ids.len(), self.membership.len()] != [t; 4] {
            return Err(EncoderError::Input("text input fields differ in length".into()));
        }
        if self.membership.iter().flatten().any(|&l| l >= cfg.max_lines) {
            return Err(EncoderError::Input(format!("line index beyond {}", cfg.max_lines)));
        }
        Ok(())
    }
}

impl From<&DocInputs> for TextInputs {
    fn from(d: &DocInputs) -> Self {
        Self {
            token_ids: d.token_ids.clone(),
            positions: d.positions.clone(),
            bboxes: d.bboxes.clone(),
            segment_ids: d.segment_ids.clone(),
            membership: d.membership.clone(),
        }
    }
}

/// Per-line dual-stream features for a batch; padded rows are exact zeros.
#[derive(Clone, Debug)]
pub struct BatchFeatures {
    /// `[L, d]` textline visual features per document.
    pub rho: Vec<Var>,
    /// `[L, d]` textline textual features per document.
    pub tau: Vec<Var>,
    /// `[L]` per document, true for real lines.
    pub pad_mask: Vec<Vec<bool>>,
}

/// Model parameters and the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn normal(&mut self, name: &str, shape: &[usize], std: f64, decay: bool) -> Result<(), NumError> {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.store.insert(name, Tensor::new(shape, data)?, decay)
    }

    fn full(&mut self, name: &str, shape: &[usize], value: f64) -> Result<(), NumError> {
        self.store.insert(name, Tensor::full(shape, value), true)
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize, std: f64) -> Result<(), NumError> {
        self.normal(&format!("{name}.w"), &[din, dout], std, true)?;
        self.full(&format!("{name}.b"), &[dout], 0.0)
    }

    fn layer_norm(&mut self, name: &str, d: usize) -> Result<(), NumError> {
        self.full(&format!("{name}.g"), &[d], 1.0)?;
        self.full(&format!("{name}.b"), &[d], 0.0)
    }

    fn transformer_layer(&mut self, name: &str, d: usize, ffn: usize) -> Result<(), NumError> {
        for proj in ["q", "k", "v", "o"] {
            self.linear(&format!("{name}.{proj}"), d, d, INIT_STD)?;
        }
        self.layer_norm(&format!("{name}.ln1"), d)?;
        self.linear(&format!("{name}.ffn1"), d, ffn, INIT_STD)?;
        self.linear(&format!("{name}.ffn2"), ffn, d, INIT_STD)?;
        self.layer_norm(&format!("{name}.ln2"), d)
    }
}

/// Kernel size and stride of the three transposed convolutions (14→28→56→224).
pub(crate) const DECODER_LAYERS: [(usize, usize); 3] = [(4, 2), (4, 2), (4, 4)];

/// Standard deviation for transformer weights and embedding tables.
const INIT_STD: f64 = 0.02;
/// Six layout tables: x0, y0, x1, y1, width, height.
pub(crate) const LAYOUT_TABLES: [&str; 6] = ["x0", "y0", "x1", "y1", "w", "h"];

impl Model {
    /// Fresh parameters. Transformer weights and embeddings draw from
    /// N(0, 0.02²); convolutional and RoI weights use fan-in scaling so the
    /// image stream keeps its signal through the stride-2 stages.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, EncoderError> {
        config.check_shapes()?;
        let mut store = ParamStore::new();
        let mut init = Init { store: &mut store, rng: ChaCha8Rng::seed_from_u64(seed) };
        let d = config.hidden_dim;
        let fan_in = |n: usize| (2.0 / n as f64).sqrt();

        let mut cin = 1;
        for (i, &c) in config.conv_channels.iter().enumerate() {
            init.normal(&format!("img.conv{i}.w"), &[c, cin, 3, 3], fan_in(cin * 9), true)?;
            init.full(&format!("img.conv{i}.b"), &[c], 0.0)?;
            cin = c;
        }
        let c = cin;
        init.linear("img.proj", c, d, fan_in(c))?;
        init.linear("roi.fc1", c, d, fan_in(c))?;
        init.linear("roi.fc2", d, d, fan_in(d))?;
        // Decoder mirrors the backbone channels back down to one.
        let chans = [c, config.conv_channels[1], config.conv_channels[0], 1];
        for (i, &(k, stride)) in DECODER_LAYERS.iter().enumerate() {
            let (ci, co) = (chans[i], chans[i + 1]);
            init.normal(&format!("dec.deconv{i}.w"), &[ci, co, k, k], fan_in(ci * k * k / (stride * stride)), true)?;
            init.full(&format!("dec.deconv{i}.b"), &[co], 0.0)?;
        }

        init.normal("txt.tok_emb", &[config.vocab_size, d], INIT_STD, false)?;
        init.normal("txt.pos_emb", &[config.max_tokens, d], INIT_STD, false)?;
        for t in LAYOUT_TABLES {
            init.normal(&format!("txt.{t}_emb"), &[crate::doclib::LAYOUT_MAX as usize + 1, d], INIT_STD, false)?;
        }
        init.normal("txt.seg_emb", &[2, d], INIT_STD, false)?;
        init.layer_norm("txt.emb_ln", d)?;
        for axis in ["1d", "x", "y"] {
            init.normal(&format!("txt.bias_{axis}"), &[config.bias_buckets, config.heads], INIT_STD, false)?;
        }
        for i in 0..config.text_layers {
            init.transformer_layer(&format!("txt.layer{i}"), d, config.ffn_dim)?;
        }
        for i in 0..config.fusion_layers {
            init.transformer_layer(&format!("fus.layer{i}"), d, config.ffn_dim)?;
        }
        init.linear("mlm", d, config.vocab_size, INIT_STD)?;
        init.linear("tgm", d, config.grid.cells(), INIT_STD)?;
        Ok(Self { config, params: store })
    }
}

/// Everything one document contributes to the losses.
#[derive(Clone, Debug)]
pub struct DocFeatures {
    /// `[C, 14, 14]` backbone output.
    pub feature_map: Var,
    /// `[49, d]` pooled and projected visual tokens.
    pub visual_tokens: Var,
    /// `[T, d]` text-encoder output.
    pub text_hidden: Var,
    /// `[L, d]` RoI features per line slot.
    pub rho: Var,
    /// `[L, d]` mean text feature per line slot.
    pub tau: Var,
    /// `[L]` real-line mask shared by `rho` and `tau`.
    pub pad_mask: Vec<bool>,
    /// `[49 + T, d]` fusion output, when requested.
    pub fused: Option<Var>,
}

/// Runs both streams on one document, and the fusion encoder when `fuse`.
pub fn forward_document(
    g: &mut Graph,
    p: &BoundParams,
    cfg: &ModelConfig,
    image: &Tensor,
    text: &TextInputs,
    line_bboxes: &[BBox],
    fuse: bool,
) -> Result<DocFeatures, EncoderError> {
    if line_bboxes.len() != cfg.max_lines {
        return Err(EncoderError::Input(format!("{} line boxes, expected {}", line_bboxes.len(), cfg.max_lines)));
    }
    let img = g.constant(image.clone());
    let (feature_map, visual_tokens) = encode_image(g, p, img)?;
    let embedded = embed_text_inputs(g, p, text, cfg)?;
    let text_hidden = encode_text(g, p, cfg, embedded, text, true)?;
    let (tau, pad_mask) = pool_textline_text(g, text_hidden, &text.membership, cfg.max_lines);
    let rho = roi_pool_textlines(g, p, feature_map, line_bboxes, &pad_mask)?;
    let fused = if fuse { Some(encode_multimodal(g, p, cfg, visual_tokens, text_hidden)?) } else { None };
    Ok(DocFeatures { feature_map, visual_tokens, text_hidden, rho, tau, pad_mask, fused })
}

/// Post-LN transformer layer: attention, residual, norm, feed-forward,
/// residual, norm. `bias[h]` is the additive `[T, T]` logit bias of head `h`.
pub(crate) fn transformer_layer(
    g: &mut Graph,
    p: &BoundParams,
    name: &str,
    heads: usize,
    x: Var,
    bias: Option<&[Var]>,
) -> Var {
    use crate::numkit::nn::{linear, scaled_dot_attention};
    let d = g.shape(x)[1];
    let dh = d / heads;
    let lin = |g: &mut Graph, x: Var, proj: &str| linear(g, x, p.get(&format!("{name}.{proj}.w")), p.get(&format!("{name}.{proj}.b")));
    let q = lin(g, x, "q");
    let k = lin(g, x, "k");
    let v = lin(g, x, "v");
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            scaled_dot_attention(g, qh, kh, vh, bias.map(|b| b[h]))
        })
        .collect();
    let attn = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    let attn = lin(g, attn, "o");
    let x = g.add(x, attn);
    let x = g.layer_norm(x, p.get(&format!("{name}.ln1.g")), p.get(&format!("{name}.ln1.b")), LN_EPS);
    let h = lin(g, x, "ffn1");
    let h = g.gelu(h);
    let h = lin(g, h, "ffn2");
    let x = g.add(x, h);
    g.layer_norm(x, p.get(&format!("{name}.ln2.g")), p.get(&format!("{name}.ln2.b")), LN_EPS)
}

pub(crate) const LN_EPS: f64 = 1e-12;

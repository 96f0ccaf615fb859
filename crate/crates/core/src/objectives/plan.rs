use std::collections::BTreeSet;
use std::ops::Range;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ObjectiveError;
use crate::doclib::{assign_grid, BBox, DocInputs, GridConfig, IMAGE_SIZE, MASK_ID};
use crate::encoders::TextInputs;
use crate::numkit::Tensor;

/// Gray levels of a page: the dominant background and the darkest ink.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageLevels {
    pub background: f64,
    pub ink: f64,
}

impl PageLevels {
    /// Pixels darker than the midpoint between ink and background are strokes.
    pub fn stroke_threshold(&self) -> f64 {
        (self.background + self.ink) / 2.0
    }

    /// Background = most frequent 8-bit level, ink = darkest pixel.
    pub fn estimate(image: &Tensor) -> Self {
        let mut hist = [0usize; 256];
        let mut ink = f64::INFINITY;
        for &v in image.data() {
            hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
            ink = ink.min(v);
        }
        let mode = (0..256).max_by_key(|&i| (hist[i], i)).unwrap_or(255);
        Self { background: mode as f64 / 255.0, ink: ink.min(1.0) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskRates {
    /// Per-token selection probability for MLM.
    pub mlm: f64,
    /// Fraction of real lines chosen for MRM (rounded up).
    pub mrm: f64,
    /// Fraction of eligible lines chosen for TGM (rounded up).
    pub tgm: f64,
    /// Sampling rate of background pixels inside MRM lines.
    pub mrm_background: f64,
}

impl Default for MaskRates {
    fn default() -> Self {
        Self { mlm: 0.15, mrm: 0.15, tgm: 0.15, mrm_background: 0.15 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlmAction {
    Mask,
    Random(usize),
    Keep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlmTarget {
    /// Sequence position of the token.
    pub position: usize,
    /// Original token id, the prediction target.
    pub label: usize,
    pub action: MlmAction,
}

/// Masking decisions for one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub seed: u64,
    pub mlm: Vec<MlmTarget>,
    /// Word boxes of MLM-selected tokens, covered in the input image.
    pub mlm_covered_boxes: Vec<BBox>,
    pub mrm_lines: Vec<usize>,
    /// Row-major indices into the 224×224 page of pixels scored by MRM.
    pub mrm_pixels: Vec<u32>,
    pub tgm_lines: Vec<usize>,
    pub tgm_positions: Vec<usize>,
    /// Grid cell of each TGM token's true box.
    pub tgm_labels: Vec<usize>,
}

impl MaskPlan {
    pub fn mrm_pixel_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; IMAGE_SIZE * IMAGE_SIZE];
        for &i in &self.mrm_pixels {
            mask[i as usize] = true;
        }
        mask
    }

    /// Lines holding at least one MLM-selected token.
    pub fn mlm_lines(&self, inputs: &DocInputs) -> BTreeSet<usize> {
        self.mlm.iter().filter_map(|t| inputs.membership[t.position]).collect()
    }

    /// Model inputs with the plan applied: MLM tokens replaced and their
    /// boxes zeroed, TGM boxes zeroed, and covered or MRM-masked pixels
    /// filled with the background level.
    pub fn apply(&self, inputs: &DocInputs, image: &Tensor, levels: &PageLevels) -> (TextInputs, Tensor) {
        let mut text = TextInputs::from(inputs);
        for t in &self.mlm {
            text.token_ids[t.position] = match t.action {
                MlmAction::Mask => MASK_ID,
                MlmAction::Random(id) => id,
                MlmAction::Keep => t.label,
            };
            text.bboxes[t.position] = BBox::ZERO;
        }
        for &pos in &self.tgm_positions {
            text.bboxes[pos] = BBox::ZERO;
        }
        let mut img = image.clone();
        let px = img.data_mut();
        for b in &self.mlm_covered_boxes {
            let (x0, y0, x1, y1) = b.pixel_span(IMAGE_SIZE);
            for y in y0..y1 {
                px[y * IMAGE_SIZE + x0..y * IMAGE_SIZE + x1].fill(levels.background);
            }
        }
        for &i in &self.mrm_pixels {
            px[i as usize] = levels.background;
        }
        (text, img)
    }
}

/// Everything [`plan_masks`] needs besides the document itself.
#[derive(Clone, Debug)]
pub struct PlanConfig {
    pub rates: MaskRates,
    /// Ids drawn for the "random token" MLM action.
    pub replacement_ids: Range<usize>,
    pub grid: GridConfig,
}

/// Draws MLM tokens, MRM lines and pixels, and TGM lines for one document.
///
/// MLM selects each word token of a kept line with probability `rates.mlm`
/// and assigns BERT's 80/10/10 mask/random/keep actions. MRM takes
/// `ceil(rates.mrm · lines)` lines; inside each it scores every stroke pixel
/// and a `rates.mrm_background` sample of background pixels, skipping pixels
/// of MLM-covered words. TGM takes `ceil(rates.tgm · eligible)` lines among
/// those that are neither MRM lines nor hold an MLM token.
pub fn plan_masks(
    inputs: &DocInputs,
    image: &Tensor,
    levels: &PageLevels,
    cfg: &PlanConfig,
    seed: u64,
) -> Result<MaskPlan, ObjectiveError> {
    let word_positions: Vec<usize> = (0..inputs.len()).filter(|&i| inputs.membership[i].is_some()).collect();
    if word_positions.is_empty() {
        return Err(ObjectiveError::NoWordTokens);
    }
    if cfg.replacement_ids.is_empty() {
        return Err(ObjectiveError::InvalidConfig("empty replacement id range".into()));
    }
    if image.shape() != [1, IMAGE_SIZE, IMAGE_SIZE] {
        return Err(ObjectiveError::InvalidConfig(format!("image shape {:?}", image.shape())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mlm = Vec::new();
    for &pos in &word_positions {
        if rng.random::<f64>() < cfg.rates.mlm {
            let u: f64 = rng.random();
            let action = if u < 0.8 {
                MlmAction::Mask
            } else if u < 0.9 {
                MlmAction::Random(rng.random_range(cfg.replacement_ids.clone()))
            } else {
                MlmAction::Keep
            };
            mlm.push(MlmTarget { position: pos, label: inputs.token_ids[pos], action });
        }
    }
    let covered: BTreeSet<[u32; 4]> = mlm.iter().map(|t| inputs.bboxes[t.position].to_array()).collect();
    let mlm_covered_boxes: Vec<BBox> = covered.iter().map(|&b| BBox::try_from(b).expect("valid box")).collect();
    let covered_spans: Vec<_> = mlm_covered_boxes.iter().map(|b| b.pixel_span(IMAGE_SIZE)).collect();

    let real = inputs.real_lines();
    let n_mrm = ((cfg.rates.mrm * real.len() as f64).ceil() as usize).min(real.len());
    let mut mrm_lines: Vec<usize> = sample(&mut rng, real.len(), n_mrm).into_iter().map(|i| real[i]).collect();
    mrm_lines.sort_unstable();

    let threshold = levels.stroke_threshold();
    let mut mask = vec![false; IMAGE_SIZE * IMAGE_SIZE];
    for &l in &mrm_lines {
        let (x0, y0, x1, y1) = inputs.line_bboxes[l].pixel_span(IMAGE_SIZE);
        for y in y0..y1 {
            for x in x0..x1 {
                if covered_spans.iter().any(|&(a, b, c, d)| a <= x && x < c && b <= y && y < d) {
                    continue;
                }
                let i = y * IMAGE_SIZE + x;
                let stroke = image.data()[i] < threshold;
                let sampled = rng.random::<f64>() < cfg.rates.mrm_background;
                if stroke || sampled {
                    mask[i] = true;
                }
            }
        }
    }
    let mrm_pixels = (0..mask.len()).filter(|&i| mask[i]).map(|i| i as u32).collect();

    let mlm_lines: BTreeSet<usize> = mlm.iter().filter_map(|t| inputs.membership[t.position]).collect();
    let eligible: Vec<usize> =
        real.iter().copied().filter(|l| !mlm_lines.contains(l) && mrm_lines.binary_search(l).is_err()).collect();
    let n_tgm = ((cfg.rates.tgm * eligible.len() as f64).ceil() as usize).min(eligible.len());
    let mut tgm_lines: Vec<usize> = sample(&mut rng, eligible.len(), n_tgm).into_iter().map(|i| eligible[i]).collect();
    tgm_lines.sort_unstable();
    let tgm_positions: Vec<usize> = (0..inputs.len())
        .filter(|&i| inputs.membership[i].is_some_and(|l| tgm_lines.binary_search(&l).is_ok()))
        .collect();
    let tgm_labels = tgm_positions.iter().map(|&i| assign_grid(&inputs.bboxes[i], &cfg.grid)).collect();

    Ok(MaskPlan { seed, mlm, mlm_covered_boxes, mrm_lines, mrm_pixels, tgm_lines, tgm_positions, tgm_labels })
}

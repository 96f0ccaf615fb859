//! Deterministic synthetic pages with exact OCR ground truth.
//!
//! Every word is drawn as a binary glyph pattern derived from its lexicon
//! index, so a word always looks the same wherever it appears. Lines sit in
//! distinct rows of a fixed 16-pixel pitch; line text follows a fixed
//! bigram chain so masked words are predictable from their neighbours.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doclib::{
    corpus::write_corpus, normalize_bbox, DocError, Document, Manifest, Textline, Vocab, Word, IMAGE_SIZE, UNK_ID,
};
use crate::numkit::Tensor;
use crate::seed::derive_seed;

const ROW_PITCH: usize = 16;
const MARGIN: usize = 4;
const WORD_GAP: usize = 4;
/// Glyph patterns are drawn on a grid of `BLOCK × BLOCK` pixel blocks.
const BLOCK: usize = 2;
const SUCCESSORS: u64 = 4;
const SYLLABLES: [&str; 16] = ["ka", "ro", "mi", "tu", "se", "na", "lo", "vi", "pe", "da", "gu", "zo", "fa", "ri", "be", "ho"];

#[derive(Debug, Error)]
pub enum GenError {
    #[error("ink level {ink} is not darker than background {background}; text would be invisible")]
    InvisibleInk { ink: f64, background: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("layout overflow: {0}")]
    LayoutOverflow(String),
    #[error(transparent)]
    Doc(#[from] DocError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub seed: u64,
    pub lines_range: [usize; 2],
    pub words_per_line_range: [usize; 2],
    pub glyph_size_px: usize,
    pub ink_level: f64,
    pub background_level: f64,
    pub vocab_size: usize,
    /// When set, every word of the first textline is tagged `B-<tag>`/`I-<tag>`
    /// and all other words `O`.
    pub first_line_tag: Option<String>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            seed: 0,
            lines_range: [4, 10],
            words_per_line_range: [2, 6],
            glyph_size_px: 10,
            ink_level: 0.1,
            background_level: 0.95,
            vocab_size: 256,
            first_line_tag: None,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.ink_level >= self.background_level {
            return Err(GenError::InvisibleInk { ink: self.ink_level, background: self.background_level });
        }
        if !(0.0..=0.5).contains(&self.ink_level) || !(0.8..=1.0).contains(&self.background_level) {
            return Err(GenError::InvalidParams(format!(
                "ink_level {} must be in [0, 0.5] and background_level {} in [0.8, 1]",
                self.ink_level, self.background_level
            )));
        }
        let [lmin, lmax] = self.lines_range;
        let [wmin, wmax] = self.words_per_line_range;
        if lmin == 0 || lmin > lmax || wmin == 0 || wmin > wmax {
            return Err(GenError::InvalidParams(format!(
                "ranges must satisfy 1 <= min <= max: lines {:?}, words {:?}",
                self.lines_range, self.words_per_line_range
            )));
        }
        if self.vocab_size < SUCCESSORS as usize {
            return Err(GenError::InvalidParams(format!("vocab_size must be at least {SUCCESSORS}")));
        }
        let g = self.glyph_size_px;
        if g < BLOCK || g > ROW_PITCH - 2 {
            return Err(GenError::LayoutOverflow(format!("glyph size {g}px must be in [{BLOCK}, {}]", ROW_PITCH - 2)));
        }
        let rows = IMAGE_SIZE / ROW_PITCH;
        if lmax > rows {
            return Err(GenError::LayoutOverflow(format!("{lmax} lines exceed the {rows} rows of a page")));
        }
        let widest = MARGIN * 2 + wmax * 2 * g + (wmax - 1) * WORD_GAP;
        if widest > IMAGE_SIZE {
            return Err(GenError::LayoutOverflow(format!("{wmax} words of {g}px glyphs need {widest}px per line")));
        }
        Ok(())
    }

    fn level(v: f64) -> f64 {
        (v * 255.0).round() / 255.0
    }

    /// Background level as stored in an 8-bit image.
    pub fn quantized_background(&self) -> f64 {
        Self::level(self.background_level)
    }

    pub fn quantized_ink(&self) -> f64 {
        Self::level(self.ink_level)
    }
}

/// The `index`-th lexicon word: two syllables for the first 256 entries,
/// three syllables after that.
pub fn lexicon_word(index: usize) -> String {
    let s = |i: usize| SYLLABLES[i % 16];
    if index < 256 {
        format!("{}{}", s(index / 16), s(index))
    } else {
        let j = index - 256;
        format!("{}{}{}", s(j / 256), s(j / 16), s(j))
    }
}

pub fn lexicon(size: usize) -> Vec<String> {
    (0..size).map(lexicon_word).collect()
}

/// Vocabulary for a generated corpus; word `i` of the lexicon gets id `4 + i`.
pub fn build_vocab(params: &GenParams) -> Vocab {
    Vocab::build(lexicon(params.vocab_size))
}

/// The `k`-th allowed follower of word `w` in the bigram chain.
fn successor(w: usize, k: u64, vocab_size: usize) -> usize {
    (derive_seed(0x5eed_0f_7e47, &[w as u64, k]) % vocab_size as u64) as usize
}

fn glyph_width(word: usize, g: usize) -> usize {
    match word % 3 {
        0 => g,
        1 => (3 * g).div_ceil(2),
        _ => 2 * g,
    }
}

/// Binary pattern `[h][w]` for lexicon word `word`; always has ink.
pub fn glyph_pattern(word: usize, g: usize) -> Vec<Vec<bool>> {
    let w = glyph_width(word, g);
    let (bw, bh) = (w.div_ceil(BLOCK), g.div_ceil(BLOCK));
    let mut blocks: Vec<bool> = (0..bw * bh).map(|i| derive_seed(word as u64, &[i as u64]) & 1 == 1).collect();
    if !blocks.iter().any(|&b| b) {
        blocks[0] = true;
    }
    (0..g).map(|y| (0..w).map(|x| blocks[(y / BLOCK) * bw + x / BLOCK]).collect()).collect()
}

/// Renders page `index` of the corpus described by `params`.
pub fn generate_document(params: &GenParams, index: u64) -> Result<Document, GenError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &[index]));
    let g = params.glyph_size_px;
    let (bg, ink) = (params.quantized_background(), params.quantized_ink());
    let mut pixels = vec![bg; IMAGE_SIZE * IMAGE_SIZE];

    let n_lines = rng.random_range(params.lines_range[0]..=params.lines_range[1]);
    // Text starts on the top row; the remaining lines take random rows below.
    let mut rows: Vec<usize> = sample(&mut rng, IMAGE_SIZE / ROW_PITCH - 1, n_lines - 1).into_iter().map(|r| r + 1).collect();
    rows.sort_unstable();
    rows.insert(0, 0);

    let mut textlines = Vec::with_capacity(n_lines);
    for (li, &row) in rows.iter().enumerate() {
        let n_words = rng.random_range(params.words_per_line_range[0]..=params.words_per_line_range[1]);
        let mut ids = vec![rng.random_range(0..params.vocab_size)];
        while ids.len() < n_words {
            let prev = *ids.last().unwrap();
            ids.push(successor(prev, rng.random_range(0..SUCCESSORS), params.vocab_size));
        }
        let width: usize = ids.iter().map(|&w| glyph_width(w, g)).sum::<usize>() + (n_words - 1) * WORD_GAP;
        let slack = IMAGE_SIZE - 2 * MARGIN - width;
        let mut x = MARGIN + rng.random_range(0..=slack.min(48));
        let y = row * ROW_PITCH + (ROW_PITCH - g) / 2;

        let mut words = Vec::with_capacity(n_words);
        let mut line_px = [u32::MAX, y as u32, 0, (y + g) as u32];
        for (wi, &w) in ids.iter().enumerate() {
            let pattern = glyph_pattern(w, g);
            let gw = pattern[0].len();
            for (dy, prow) in pattern.iter().enumerate() {
                for (dx, &on) in prow.iter().enumerate() {
                    if on {
                        pixels[(y + dy) * IMAGE_SIZE + x + dx] = ink;
                    }
                }
            }
            let px = [x as u32, y as u32, (x + gw) as u32, (y + g) as u32];
            line_px[0] = line_px[0].min(px[0]);
            line_px[2] = px[2];
            let tag = params.first_line_tag.as_ref().map(|t| match (li, wi) {
                (0, 0) => format!("B-{t}"),
                (0, _) => format!("I-{t}"),
                _ => "O".to_string(),
            });
            words.push(Word {
                text: lexicon_word(w),
                bbox: normalize_bbox(px, IMAGE_SIZE as u32, IMAGE_SIZE as u32)?,
                token_ids: vec![UNK_ID + 1 + w],
                tag,
            });
            x += gw + WORD_GAP;
        }
        textlines.push(Textline {
            words,
            line_bbox: normalize_bbox(line_px, IMAGE_SIZE as u32, IMAGE_SIZE as u32)?,
            line_index: li,
        });
    }

    Ok(Document {
        doc_id: format!("s{}-{index:05}", params.seed),
        image: Tensor::new(&[1, IMAGE_SIZE, IMAGE_SIZE], pixels).expect("page raster"),
        textlines,
        page_width: IMAGE_SIZE as u32,
        page_height: IMAGE_SIZE as u32,
    })
}

/// Writes pages `0..count` plus vocabulary and manifest under `out`.
pub fn generate_corpus(params: &GenParams, count: usize, out: &Path) -> Result<Manifest, GenError> {
    params.validate()?;
    if count == 0 {
        return Err(GenError::InvalidParams("count must be at least 1".into()));
    }
    let vocab = build_vocab(params);
    let source = serde_json::json!({ "generator": params, "count": count });
    let mut first_err = None;
    let docs = (0..count as u64).map_while(|i| match generate_document(params, i) {
        Ok(d) => Some(Ok(d)),
        Err(GenError::Doc(e)) => Some(Err(e)),
        Err(e) => {
            first_err = Some(e);
            None
        }
    });
    let manifest = write_corpus(out, docs, &vocab, Some(source))?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

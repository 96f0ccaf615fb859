//! Document model, OCR record ingestion, layout normalization and batching.

mod batch;
mod bbox;
pub(crate) mod corpus;
mod ocr;
mod vocab;

use thiserror::Error;

use crate::numkit::Tensor;

pub use batch::{build_batch, Batch, DocInputs, WordRef, MAX_LINES, MAX_TOKENS};
pub use bbox::{assign_grid, normalize_bbox, BBox, GridConfig, LAYOUT_MAX};
pub use corpus::{load_corpus, Corpus, Manifest, ManifestEntry, MANIFEST_FILE, VOCAB_FILE};
pub use ocr::{
    document_from_record, load_image, parse_ocr, read_document, save_image, serialize, write_document,
    OcrLine, OcrRecord, OcrWord, Units,
};
pub use vocab::{Vocab, CLS_ID, MASK_ID, PAD_ID, UNK_ID};

/// Side length of the square page raster fed to the image encoder.
pub const IMAGE_SIZE: usize = 224;

#[derive(Debug, Error)]
pub enum DocError {
    #[error("inverted box {0:?}")]
    InvertedBox([u32; 4]),
    #[error("box out of range {0:?}")]
    BoxOutOfRange([u32; 4]),
    #[error("empty page: {0}")]
    EmptyPage(String),
    #[error("grid {rows}x{cols} must have at least two cells")]
    InvalidGrid { rows: usize, cols: usize },
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("empty document {0}")]
    EmptyDocument(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("image {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Word {
    pub text: String,
    pub bbox: BBox,
    pub token_ids: Vec<usize>,
    /// Optional token-classification label (e.g. `B-TOTAL`).
    pub tag: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Textline {
    pub words: Vec<Word>,
    pub line_bbox: BBox,
    pub line_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub doc_id: String,
    /// Grayscale page `[1, 224, 224]`, values in `[0, 1]`.
    pub image: Tensor,
    pub textlines: Vec<Textline>,
    pub page_width: u32,
    pub page_height: u32,
}

impl Document {
    pub fn word_count(&self) -> usize {
        self.textlines.iter().map(|l| l.words.len()).sum()
    }

    pub fn token_count(&self) -> usize {
        self.words().map(|w| w.token_ids.len()).sum()
    }

    pub fn words(&self) -> impl Iterator<Item = &Word> {
        self.textlines.iter().flat_map(|l| &l.words)
    }
}

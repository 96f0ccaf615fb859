use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{imageops::FilterType, GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use super::{normalize_bbox, BBox, DocError, Document, Textline, Vocab, Word, IMAGE_SIZE};
use crate::numkit::Tensor;

/// Coordinate system of the boxes in an [`OcrRecord`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Pixels of the original page; normalized on ingestion.
    #[default]
    Pixel,
    /// Already in `[0, 1000]` layout units.
    Layout,
}

/// One page of OCR output as stored on disk (JSON). Unknown fields are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcrRecord {
    pub doc_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub units: Units,
    /// Page image path, relative to the directory the record is resolved against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub lines: Vec<OcrLine>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcrLine {
    pub bbox: [u32; 4],
    pub words: Vec<OcrWord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcrWord {
    pub text: String,
    pub bbox: [u32; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

/// Builds a [`Document`] from a parsed record and its page raster.
///
/// Words are ordered by `x0` and lines by `(y0, x0)`; both sorts are stable,
/// so ties keep record order. A line's box is widened to cover its words.
pub fn document_from_record(record: &OcrRecord, image: Tensor, vocab: &Vocab) -> Result<Document, DocError> {
    if record.width == 0 || record.height == 0 {
        return Err(DocError::EmptyPage(format!("{}: page is {}x{}", record.doc_id, record.width, record.height)));
    }
    if record.lines.iter().all(|l| l.words.is_empty()) {
        return Err(DocError::EmptyPage(record.doc_id.clone()));
    }
    if image.shape() != [1, IMAGE_SIZE, IMAGE_SIZE] || image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(DocError::Malformed(format!(
            "{}: image must be [1, {IMAGE_SIZE}, {IMAGE_SIZE}] with values in [0, 1], got {:?}",
            record.doc_id,
            image.shape()
        )));
    }
    let to_box = |b: [u32; 4]| match record.units {
        Units::Pixel => normalize_bbox(b, record.width, record.height),
        Units::Layout => BBox::try_from(b),
    };

    let mut textlines = Vec::with_capacity(record.lines.len());
    for (i, line) in record.lines.iter().enumerate() {
        if line.words.is_empty() {
            return Err(DocError::Malformed(format!("{}: line {i} has no words", record.doc_id)));
        }
        let mut line_bbox = to_box(line.bbox)?;
        let mut words = Vec::with_capacity(line.words.len());
        for w in &line.words {
            let bbox = to_box(w.bbox)?;
            line_bbox = line_bbox.union(&bbox);
            words.push(Word { text: w.text.clone(), bbox, token_ids: vocab.tokenize(&w.text), tag: w.tag.clone() });
        }
        words.sort_by_key(|w| w.bbox.x0);
        textlines.push(Textline { words, line_bbox, line_index: 0 });
    }
    textlines.sort_by_key(|l| (l.line_bbox.y0, l.line_bbox.x0));
    for (i, l) in textlines.iter_mut().enumerate() {
        l.line_index = i;
    }
    Ok(Document {
        doc_id: record.doc_id.clone(),
        image,
        textlines,
        page_width: record.width,
        page_height: record.height,
    })
}

/// Parses a JSON OCR record and loads its page image relative to `base_dir`.
pub fn parse_ocr(text: &str, base_dir: &Path, vocab: &Vocab) -> Result<Document, DocError> {
    let record: OcrRecord = serde_json::from_str(text).map_err(|e| DocError::Malformed(e.to_string()))?;
    let rel = record
        .image
        .as_deref()
        .ok_or_else(|| DocError::Malformed(format!("{}: missing image path", record.doc_id)))?;
    let image = load_image(&base_dir.join(rel))?;
    document_from_record(&record, image, vocab)
}

/// Inverse of [`document_from_record`]: boxes are written in layout units so
/// that re-parsing reproduces the document exactly.
pub fn serialize(doc: &Document, image_path: Option<&str>) -> OcrRecord {
    OcrRecord {
        doc_id: doc.doc_id.clone(),
        width: doc.page_width,
        height: doc.page_height,
        units: Units::Layout,
        image: image_path.map(str::to_string),
        lines: doc
            .textlines
            .iter()
            .map(|l| OcrLine {
                bbox: l.line_bbox.to_array(),
                words: l
                    .words
                    .iter()
                    .map(|w| OcrWord { text: w.text.clone(), bbox: w.bbox.to_array(), tag: w.tag.clone() })
                    .collect(),
            })
            .collect(),
    }
}

/// Reads an 8-bit grayscale PNG or PGM, resampling to 224×224 if needed.
pub fn load_image(path: &Path) -> Result<Tensor, DocError> {
    let img_err = |source| DocError::Image { path: path.display().to_string(), source };
    let mut gray = image::open(path).map_err(img_err)?.to_luma8();
    let size = IMAGE_SIZE as u32;
    if gray.dimensions() != (size, size) {
        gray = image::imageops::resize(&gray, size, size, FilterType::Triangle);
    }
    let data = gray.into_raw().into_iter().map(|p| p as f64 / 255.0).collect();
    Ok(Tensor::new(&[1, IMAGE_SIZE, IMAGE_SIZE], data).expect("raster size matches shape"))
}

/// Encodes a `[1, H, W]` raster as 8-bit grayscale PNG bytes.
pub(crate) fn encode_png(image: &Tensor) -> Result<Vec<u8>, DocError> {
    let &[1, h, w] = image.shape() else {
        return Err(DocError::Malformed(format!("expected [1, H, W] image, got {:?}", image.shape())));
    };
    let pixels = image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let gray = GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer size matches");
    let mut out = Cursor::new(Vec::new());
    gray.write_to(&mut out, ImageFormat::Png)
        .map_err(|source| DocError::Image { path: "<memory>".into(), source })?;
    Ok(out.into_inner())
}

pub fn save_image(image: &Tensor, path: &Path) -> Result<(), DocError> {
    fs::write(path, encode_png(image)?)?;
    Ok(())
}

fn check_doc_id(doc_id: &str) -> Result<(), DocError> {
    let ok = !doc_id.is_empty()
        && doc_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !doc_id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(DocError::Malformed(format!("doc_id {doc_id:?} is not usable as a file name")))
    }
}

/// Writes `images/<doc_id>.png` and `ocr/<doc_id>.json` under `root` and
/// returns the bytes written (image, record).
pub fn write_document(doc: &Document, root: &Path) -> Result<(Vec<u8>, Vec<u8>), DocError> {
    check_doc_id(&doc.doc_id)?;
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("ocr"))?;
    let rel = format!("images/{}.png", doc.doc_id);
    let png = encode_png(&doc.image)?;
    let mut json = serde_json::to_vec_pretty(&serialize(doc, Some(&rel)))?;
    json.push(b'\n');
    fs::write(root.join(&rel), &png)?;
    fs::write(root.join("ocr").join(format!("{}.json", doc.doc_id)), &json)?;
    Ok((png, json))
}

/// Reads a record file, resolving its image path against `root`.
pub fn read_document(ocr_path: &Path, root: &Path, vocab: &Vocab) -> Result<Document, DocError> {
    parse_ocr(&fs::read_to_string(ocr_path)?, root, vocab)
}

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use super::{AlignmentEntry, EvalError};
use crate::doclib::{BBox, Document, LAYOUT_MAX};

pub const CORRECT_COLOR: [u8; 3] = [0, 170, 0];
pub const INCORRECT_COLOR: [u8; 3] = [220, 0, 0];

/// Pixel rectangle of a layout box, clipped to the page.
fn pixel_rect(b: &BBox, w: u32, h: u32) -> (u32, u32, u32, u32) {
    let lo = |c: u32, size: u32| (c * size / LAYOUT_MAX).min(size - 1);
    let hi = |c: u32, size: u32| ((c * size).div_ceil(LAYOUT_MAX).max(1) - 1).min(size - 1);
    (lo(b.x0, w), lo(b.y0, h), hi(b.x1, w), hi(b.y1, h))
}

fn outline(img: &mut RgbImage, (x0, y0, x1, y1): (u32, u32, u32, u32), color: Rgb<u8>) {
    for x in x0..=x1 {
        img.put_pixel(x, y0, color);
        img.put_pixel(x, y1, color);
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, color);
        img.put_pixel(x1, y, color);
    }
}

/// Page image with each evaluated line outlined in the correct or incorrect
/// color, encoded as PNG and written to `out`. Returns the bytes.
pub fn render_alignment(doc: &Document, entry: &AlignmentEntry, out: &Path) -> Result<Vec<u8>, EvalError> {
    if entry.doc_id != doc.doc_id || entry.lines() > doc.textlines.len() {
        return Err(EvalError::EntryMismatch { entry: entry.doc_id.clone(), doc: doc.doc_id.clone() });
    }
    let &[1, h, w] = doc.image.shape() else {
        return Err(EvalError::InvalidConfig(format!("expected a [1, H, W] page, got {:?}", doc.image.shape())));
    };
    let (w, h) = (w as u32, h as u32);
    let mut img = RgbImage::from_fn(w, h, |x, y| {
        let v = (doc.image.data()[(y * w + x) as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    for (line, &ok) in doc.textlines.iter().zip(&entry.correct) {
        let color = if ok { CORRECT_COLOR } else { INCORRECT_COLOR };
        outline(&mut img, pixel_rect(&line.line_bbox, w, h), Rgb(color));
    }
    let mut bytes = Cursor::new(Vec::new());
    img.write_to(&mut bytes, ImageFormat::Png)?;
    let bytes = bytes.into_inner();
    fs::write(out, &bytes)?;
    Ok(bytes)
}

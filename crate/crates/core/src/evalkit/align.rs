use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::doclib::{DocInputs, Document};
use crate::encoders::{forward_document, Model, TextInputs};
use crate::numkit::{Graph, Tensor};

/// Alignment of one document. Indices count real lines only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub doc_id: String,
    /// Text→region prediction for each line.
    pub predicted: Vec<usize>,
    pub correct: Vec<bool>,
    /// Region→text prediction for each line.
    pub region_to_text: Vec<usize>,
    /// Fewer than two lines: correct by convention.
    pub trivial: bool,
}

impl AlignmentEntry {
    pub fn lines(&self) -> usize {
        self.predicted.len()
    }

    pub fn hits(&self) -> usize {
        self.correct.iter().filter(|c| **c).count()
    }

    pub fn accuracy(&self) -> f64 {
        self.hits() as f64 / self.lines() as f64
    }

    fn region_hits(&self) -> usize {
        self.region_to_text.iter().enumerate().filter(|(k, l)| k == *l).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub entries: Vec<AlignmentEntry>,
    /// Correct lines over all lines, text→region.
    pub accuracy: f64,
    pub region_to_text_accuracy: f64,
}

impl AlignmentReport {
    pub fn from_entries(entries: Vec<AlignmentEntry>) -> Self {
        let lines: usize = entries.iter().map(AlignmentEntry::lines).sum();
        let hits: usize = entries.iter().map(AlignmentEntry::hits).sum();
        let region: usize = entries.iter().map(AlignmentEntry::region_hits).sum();
        let denom = lines.max(1) as f64;
        Self { accuracy: hits as f64 / denom, region_to_text_accuracy: region as f64 / denom, entries }
    }

    pub fn mean_lines(&self) -> f64 {
        self.entries.iter().map(|e| e.lines() as f64).sum::<f64>() / self.entries.len().max(1) as f64
    }

    /// Expected accuracy of uniform guessing, `1/L̄`.
    pub fn random_baseline(&self) -> f64 {
        1.0 / self.mean_lines()
    }

    /// One JSON record per document.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }
}

fn unit_rows(t: &Tensor, rows: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&r| {
            let row = t.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.iter().map(|v| v / norm).collect()
        })
        .collect()
}

fn argmax_dot(query: &[f64], keys: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, key) in keys.iter().enumerate() {
        let s: f64 = query.iter().zip(key).map(|(a, b)| a * b).sum();
        if s > best.1 {
            best = (k, s);
        }
    }
    best.0
}

/// Text→region and region→text argmax over the real lines of `[L, d]`
/// feature matrices, on L2-normalized rows. Ties go to the lowest index.
pub fn align_features(rho: &Tensor, tau: &Tensor, mask: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let real: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let rho = unit_rows(rho, &real);
    let tau = unit_rows(tau, &real);
    let t2r = tau.iter().map(|t| argmax_dot(t, &rho)).collect();
    let r2t = rho.iter().map(|r| argmax_dot(r, &tau)).collect();
    (t2r, r2t)
}

/// Dual-stream alignment of one unmasked document; the fusion encoder is
/// not run.
pub fn document_alignment(model: &Model, doc: &Document) -> Result<AlignmentEntry, EvalError> {
    let inputs = DocInputs::from_document(doc, model.config.max_lines, model.config.max_tokens)?;
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let f = forward_document(&mut g, &p, &model.config, &doc.image, &TextInputs::from(&inputs), &inputs.line_bboxes, false)?;
    let (predicted, region_to_text) = align_features(g.value(f.rho), g.value(f.tau), &f.pad_mask);
    let correct = predicted.iter().enumerate().map(|(l, k)| l == *k).collect();
    Ok(AlignmentEntry { doc_id: doc.doc_id.clone(), trivial: predicted.len() < 2, predicted, correct, region_to_text })
}

pub fn alignment_accuracy(model: &Model, docs: &[Document]) -> Result<AlignmentReport, EvalError> {
    let entries = docs.iter().map(|d| document_alignment(model, d)).collect::<Result<_, _>>()?;
    Ok(AlignmentReport::from_entries(entries))
}

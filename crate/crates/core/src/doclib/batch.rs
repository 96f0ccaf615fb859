use super::{BBox, DocError, Document, CLS_ID, PAD_ID};

/// Textlines per document visible to the objectives.
pub const MAX_LINES: usize = 64;
/// Sequence budget per document, including the leading `[CLS]`.
pub const MAX_TOKENS: usize = 512;

/// Source word of a sequence token: textline, word within the line, and the
/// piece index when a word splits into several tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WordRef {
    pub line: usize,
    pub word: usize,
    pub piece: usize,
}

/// Model inputs for one document. Position 0 holds `[CLS]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DocInputs {
    pub token_ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub bboxes: Vec<BBox>,
    pub segment_ids: Vec<usize>,
    /// Line of each token, or `None` for specials and for lines past the cap.
    pub membership: Vec<Option<usize>>,
    pub word_refs: Vec<Option<WordRef>>,
    /// One entry per line slot (`max_lines`); padded slots are zero boxes.
    pub line_bboxes: Vec<BBox>,
    /// True for slots holding a real line with at least one kept token.
    pub line_mask: Vec<bool>,
}

impl DocInputs {
    pub fn from_document(doc: &Document, max_lines: usize, max_tokens: usize) -> Result<Self, DocError> {
        if doc.token_count() == 0 {
            return Err(DocError::EmptyDocument(doc.doc_id.clone()));
        }
        if max_lines == 0 || max_tokens < 2 {
            return Err(DocError::Malformed(format!("need max_lines >= 1 and max_tokens >= 2, got {max_lines}, {max_tokens}")));
        }
        let mut out = DocInputs {
            token_ids: vec![CLS_ID],
            positions: vec![0],
            bboxes: vec![BBox::ZERO],
            segment_ids: vec![0],
            membership: vec![None],
            word_refs: vec![None],
            line_bboxes: vec![BBox::ZERO; max_lines],
            line_mask: vec![false; max_lines],
        };
        'lines: for (li, line) in doc.textlines.iter().enumerate() {
            for (wi, word) in line.words.iter().enumerate() {
                for (piece, &id) in word.token_ids.iter().enumerate() {
                    if out.token_ids.len() == max_tokens {
                        break 'lines;
                    }
                    let kept = li < max_lines;
                    out.positions.push(out.token_ids.len());
                    out.token_ids.push(id);
                    out.bboxes.push(word.bbox);
                    out.segment_ids.push(0);
                    out.membership.push(kept.then_some(li));
                    out.word_refs.push(Some(WordRef { line: li, word: wi, piece }));
                    if kept {
                        out.line_mask[li] = true;
                        out.line_bboxes[li] = line.line_bbox;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn max_lines(&self) -> usize {
        self.line_mask.len()
    }

    /// Slots of real lines, ascending.
    pub fn real_lines(&self) -> Vec<usize> {
        (0..self.line_mask.len()).filter(|&l| self.line_mask[l]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub docs: Vec<DocInputs>,
    pub max_lines: usize,
    pub max_tokens: usize,
}

impl Batch {
    /// Longest sequence in the batch.
    pub fn seq_len(&self) -> usize {
        self.docs.iter().map(DocInputs::len).max().unwrap_or(0)
    }

    /// `[N, seq_len]` token ids, right-padded with `[PAD]`.
    pub fn token_matrix(&self) -> Vec<Vec<usize>> {
        let t = self.seq_len();
        self.docs
            .iter()
            .map(|d| {
                let mut row = d.token_ids.clone();
                row.resize(t, PAD_ID);
                row
            })
            .collect()
    }

    /// `[N, max_lines]` textline padding mask.
    pub fn line_mask(&self) -> Vec<Vec<bool>> {
        self.docs.iter().map(|d| d.line_mask.clone()).collect()
    }
}

pub fn build_batch(docs: &[Document], max_lines: usize, max_tokens: usize) -> Result<Batch, DocError> {
    if docs.is_empty() {
        return Err(DocError::EmptyBatch);
    }
    let docs = docs
        .iter()
        .map(|d| DocInputs::from_document(d, max_lines, max_tokens))
        .collect::<Result<_, _>>()?;
    Ok(Batch { docs, max_lines, max_tokens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doclib::{Textline, Word, IMAGE_SIZE};
    use crate::numkit::Tensor;

    fn doc(line_words: &[usize], pieces: usize) -> Document {
        let textlines = line_words
            .iter()
            .enumerate()
            .map(|(li, &n)| {
                let y = (li as u32 * 7) % 990;
                let bbox = BBox::new(0, y, 900, y + 5).unwrap();
                let words = (0..n)
                    .map(|wi| Word {
                        text: "w".into(),
                        bbox: BBox::new(wi as u32, y, wi as u32 + 1, y + 5).unwrap(),
                        token_ids: vec![10 + li; pieces],
                        tag: None,
                    })
                    .collect();
                Textline { words, line_bbox: bbox, line_index: li }
            })
            .collect();
        Document {
            doc_id: "t".into(),
            image: Tensor::full(&[1, IMAGE_SIZE, IMAGE_SIZE], 1.0),
            textlines,
            page_width: 100,
            page_height: 100,
        }
    }

    #[test]
    fn three_lines_give_three_mask_entries() {
        let b = build_batch(&[doc(&[2, 3, 1], 1)], MAX_LINES, MAX_TOKENS).unwrap();
        let mask = &b.line_mask()[0];
        assert_eq!(mask.len(), 64);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 3);
        assert_eq!(b.docs[0].len(), 7);
        assert_eq!(b.docs[0].token_ids[0], CLS_ID);
        assert_eq!(b.docs[0].membership[0], None);
    }

    #[test]
    fn long_document_truncates_to_budget() {
        // 600 tokens over 60 lines of 10 words each
        let d = doc(&[10; 60], 1);
        let b = build_batch(&[d], MAX_LINES, MAX_TOKENS).unwrap();
        let inp = &b.docs[0];
        assert_eq!(inp.len(), 512);
        let kept_lines = inp.real_lines();
        // 511 word tokens: 51 full lines and one partial
        assert_eq!(kept_lines.len(), 52);
        for (t, m) in inp.membership.iter().enumerate().skip(1) {
            let l = m.unwrap();
            assert!(inp.line_mask[l]);
            assert_eq!(inp.word_refs[t].unwrap().line, l);
        }
    }

    #[test]
    fn lines_past_cap_have_no_membership() {
        let d = doc(&[1; 70], 1);
        let inp = &build_batch(&[d], MAX_LINES, MAX_TOKENS).unwrap().docs[0];
        assert_eq!(inp.len(), 71);
        assert_eq!(inp.real_lines().len(), 64);
        assert!(inp.membership[65..].iter().all(Option::is_none));
        assert!(inp.word_refs[65..].iter().all(Option::is_some));
    }

    #[test]
    fn batch_pads_sequences_and_lines() {
        let b = build_batch(&[doc(&[1; 5], 1), doc(&[1; 7], 2)], MAX_LINES, MAX_TOKENS).unwrap();
        assert_eq!(b.seq_len(), 15);
        let m = b.token_matrix();
        assert_eq!(m[0].len(), 15);
        assert_eq!(m[0][6..], [PAD_ID; 9]);
        let masks = b.line_mask();
        assert_ne!(masks[0], masks[1]);
        assert_eq!(masks[1].iter().filter(|&&x| x).count(), 7);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(matches!(build_batch(&[], 64, 512), Err(DocError::EmptyBatch)));
        assert!(matches!(build_batch(&[doc(&[2], 0)], 64, 512), Err(DocError::EmptyDocument(_))));
    }
}

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{add_head, finetune_loop, EvalError, FinetuneConfig};
use crate::doclib::{DocInputs, Document};
use crate::encoders::{forward_document, Model, ModelConfig, TextInputs, VISUAL_TOKENS};
use crate::numkit::nn::linear;
use crate::numkit::{BoundParams, Graph, Tensor, Var};

const HEAD: &str = "ner";

/// BIO label set: `O` first, then `B-T`, `I-T` for each entity type in
/// sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSet {
    labels: Vec<String>,
}

impl TagSet {
    pub fn new<'a>(types: impl IntoIterator<Item = &'a str>) -> Self {
        let types: BTreeSet<&str> = types.into_iter().collect();
        let mut labels = vec!["O".to_string()];
        for t in types {
            labels.push(format!("B-{t}"));
            labels.push(format!("I-{t}"));
        }
        Self { labels }
    }

    /// Entity types mentioned by the word tags of `docs`.
    pub fn from_documents(docs: &[Document]) -> Result<Self, EvalError> {
        let mut types = BTreeSet::new();
        for w in docs.iter().flat_map(Document::words) {
            match w.tag.as_deref() {
                None | Some("O") => {}
                Some(t) => match t.strip_prefix("B-").or_else(|| t.strip_prefix("I-")) {
                    Some(kind) if !kind.is_empty() => {
                        types.insert(kind.to_string());
                    }
                    _ => return Err(EvalError::UnknownTag(t.to_string())),
                },
            }
        }
        Ok(Self::new(types.iter().map(String::as_str)))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn id(&self, tag: &str) -> Result<usize, EvalError> {
        self.labels.iter().position(|l| l == tag).ok_or_else(|| EvalError::UnknownTag(tag.to_string()))
    }
}

/// Gold label of every sequence position; `None` for `[CLS]`. Untagged
/// words count as `O`; continuation pieces of a `B-T` word become `I-T`.
pub fn token_labels(doc: &Document, inputs: &DocInputs, tags: &TagSet) -> Result<Vec<Option<usize>>, EvalError> {
    inputs
        .word_refs
        .iter()
        .map(|r| {
            let Some(r) = r else { return Ok(None) };
            let tag = doc.textlines[r.line].words[r.word].tag.as_deref().unwrap_or("O");
            let id = tags.id(tag)?;
            match tag.strip_prefix("B-") {
                Some(kind) if r.piece > 0 => tags.id(&format!("I-{kind}")).map(Some),
                _ => Ok(Some(id)),
            }
        })
        .collect()
}

/// A labeled span `[start, end)` over a tag sequence.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

/// Entity spans of a BIO sequence, conlleval style: an `I-T` that does not
/// continue a `T` entity opens a new one.
pub fn extract_spans<S: AsRef<str>>(labels: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, l) in labels.iter().enumerate() {
        let l = l.as_ref();
        let (begin, kind) = match (l.strip_prefix("B-"), l.strip_prefix("I-")) {
            (Some(k), _) => (true, Some(k)),
            (_, Some(k)) => (false, Some(k)),
            _ => (false, None),
        };
        let continues = !begin && matches!((&open, kind), (Some(s), Some(k)) if s.kind == k);
        if continues {
            if let Some(s) = open.as_mut() {
                s.end = i + 1;
            }
            continue;
        }
        spans.extend(open.take());
        if let Some(k) = kind {
            open = Some(Span { kind: k.to_string(), start: i, end: i + 1 });
        }
    }
    spans.extend(open);
    spans
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    /// Harmonic mean of precision and recall; `None` when there are no
    /// spans on either side.
    pub fn f1(&self) -> Option<f64> {
        let denom = self.predicted + self.gold;
        (denom > 0).then(|| 2.0 * self.matched as f64 / denom as f64)
    }
}

/// Exact-span entity scores, micro-averaged over types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub total: SpanCounts,
    pub per_type: BTreeMap<String, SpanCounts>,
}

impl EntityScore {
    pub fn f1(&self) -> Option<f64> {
        self.total.f1()
    }
}

pub fn entity_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> EntityScore {
    let mut score = EntityScore { total: SpanCounts::default(), per_type: BTreeMap::new() };
    for (g, p) in gold.iter().zip(pred) {
        let gs: BTreeSet<Span> = extract_spans(g).into_iter().collect();
        let ps: BTreeSet<Span> = extract_spans(p).into_iter().collect();
        for s in &gs {
            score.per_type.entry(s.kind.clone()).or_default().gold += 1;
        }
        for s in &ps {
            let c = score.per_type.entry(s.kind.clone()).or_default();
            c.predicted += 1;
            if gs.contains(s) {
                c.matched += 1;
            }
        }
    }
    for c in score.per_type.values() {
        score.total.matched += c.matched;
        score.total.predicted += c.predicted;
        score.total.gold += c.gold;
    }
    score
}

fn token_logits(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, inputs: &DocInputs, image: &Tensor) -> Result<Var, EvalError> {
    let f = forward_document(g, p, cfg, image, &TextInputs::from(inputs), &inputs.line_bboxes, true)?;
    let rows: Vec<usize> = (0..inputs.len()).map(|t| VISUAL_TOKENS + t).collect();
    let h = g.gather_rows(f.fused.expect("fused features"), &rows);
    Ok(linear(g, h, p.get(&format!("{HEAD}.w")), p.get(&format!("{HEAD}.b"))))
}

/// Predicted label id for every sequence position of `doc`.
pub fn predict_tags(model: &Model, doc: &Document) -> Result<Vec<usize>, EvalError> {
    let inputs = DocInputs::from_document(doc, model.config.max_lines, model.config.max_tokens)?;
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let logits = token_logits(&mut g, &p, &model.config, &inputs, &doc.image)?;
    let t = g.value(logits);
    Ok((0..inputs.len())
        .map(|r| {
            let row = t.row(r);
            (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct NerOutcome {
    /// Fine-tuned model including the `ner` head.
    pub model: Model,
    pub score: EntityScore,
    /// Every training label was `O`; nothing was trained and F1 is undefined.
    pub degenerate: bool,
    pub losses: Vec<f64>,
}

impl NerOutcome {
    /// Entity F1 on the evaluation set; undefined for a degenerate corpus.
    pub fn f1(&self) -> Option<f64> {
        if self.degenerate {
            None
        } else {
            self.score.f1()
        }
    }
}

struct Labeled<'a> {
    doc: &'a Document,
    inputs: DocInputs,
    labels: Vec<Option<usize>>,
}

fn label_all<'a>(docs: &'a [Document], cfg: &ModelConfig, tags: &TagSet) -> Result<Vec<Labeled<'a>>, EvalError> {
    docs.iter()
        .map(|doc| {
            let inputs = DocInputs::from_document(doc, cfg.max_lines, cfg.max_tokens)?;
            let labels = token_labels(doc, &inputs, tags)?;
            Ok(Labeled { doc, inputs, labels })
        })
        .collect()
}

fn evaluate(model: &Model, eval: &[Labeled], tags: &TagSet) -> Result<EntityScore, EvalError> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for item in eval {
        let p = predict_tags(model, item.doc)?;
        let (g, pr): (Vec<String>, Vec<String>) = item
            .labels
            .iter()
            .zip(&p)
            .filter_map(|(g, p)| g.map(|g| (tags.label(g).to_string(), tags.label(*p).to_string())))
            .unzip();
        gold.push(g);
        pred.push(pr);
    }
    Ok(entity_f1(&gold, &pred))
}

/// Adds a linear tag head over the fused text features, fine-tunes the whole
/// model with token cross-entropy on `train`, and scores `eval`.
pub fn finetune_token_classifier(
    base: &Model,
    train: &[Document],
    eval: &[Document],
    tags: &TagSet,
    cfg: &FinetuneConfig,
) -> Result<NerOutcome, EvalError> {
    let mut model = base.clone();
    add_head(&mut model.params, HEAD, model.config.hidden_dim, tags.len(), cfg.seed)?;
    let train = label_all(train, &model.config, tags)?;
    let eval = label_all(eval, &model.config, tags)?;
    let degenerate = train.iter().flat_map(|t| t.labels.iter().flatten()).all(|&l| l == 0);
    if degenerate {
        log::warn!("every training label is O; entity F1 is undefined");
        let score = evaluate(&model, &eval, tags)?;
        return Ok(NerOutcome { model, score, degenerate, losses: Vec::new() });
    }
    let mcfg = model.config.clone();
    let losses = finetune_loop(&mut model.params, train.len(), cfg, |g, p, idx| {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for &i in idx {
            let item = &train[i];
            let logits = token_logits(g, p, &mcfg, &item.inputs, &item.doc.image)?;
            let keep: Vec<usize> = (0..item.labels.len()).filter(|&t| item.labels[t].is_some()).collect();
            rows.push(g.gather_rows(logits, &keep));
            labels.extend(keep.iter().map(|&t| item.labels[t].expect("kept")));
        }
        let all = g.concat_rows(&rows);
        Ok(g.cross_entropy_mean(all, &labels, &vec![false; labels.len()])?)
    })?;
    let score = evaluate(&model, &eval, tags)?;
    Ok(NerOutcome { model, score, degenerate, losses })
}

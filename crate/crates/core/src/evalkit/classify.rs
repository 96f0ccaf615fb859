use super::{add_head, finetune_loop, EvalError, FinetuneConfig};
use crate::doclib::{DocInputs, Document};
use crate::encoders::{forward_document, Model, ModelConfig, TextInputs, VISUAL_TOKENS};
use crate::numkit::nn::linear;
use crate::numkit::{BoundParams, Graph, Tensor, Var};

const HEAD: &str = "cls";

/// Adds an `n_classes` head over the `[3d]` document feature.
pub fn add_class_head(model: &mut Model, n_classes: usize, seed: u64) -> Result<(), EvalError> {
    if n_classes < 2 {
        return Err(EvalError::InvalidConfig(format!("need at least 2 classes, got {n_classes}")));
    }
    add_head(&mut model.params, HEAD, 3 * model.config.hidden_dim, n_classes, seed)?;
    Ok(())
}

/// `[1, C]` logits over the concatenation of the mean pre-fusion visual
/// token, the mean post-fusion visual token and the fused `[CLS]` feature.
pub fn class_logits(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, inputs: &DocInputs, image: &Tensor) -> Result<Var, EvalError> {
    let f = forward_document(g, p, cfg, image, &TextInputs::from(inputs), &inputs.line_bboxes, true)?;
    let fused = f.fused.expect("fused features");
    let avg = g.constant(Tensor::full(&[1, VISUAL_TOKENS], 1.0 / VISUAL_TOKENS as f64));
    let pre = g.matmul(avg, f.visual_tokens);
    let visual_out = g.gather_rows(fused, &(0..VISUAL_TOKENS).collect::<Vec<_>>());
    let post = g.matmul(avg, visual_out);
    let cls = g.gather_rows(fused, &[VISUAL_TOKENS]);
    let h = g.concat_cols(&[pre, post, cls]);
    Ok(linear(g, h, p.get(&format!("{HEAD}.w")), p.get(&format!("{HEAD}.b"))))
}

pub fn classify_document(model: &Model, doc: &Document, n_classes: usize) -> Result<Vec<f64>, EvalError> {
    let want = [3 * model.config.hidden_dim, n_classes];
    match model.params.get(&format!("{HEAD}.w")) {
        Some(w) if w.shape() == want => {}
        other => {
            return Err(EvalError::InvalidConfig(format!(
                "classification head has shape {:?}, expected {want:?}",
                other.map(|w| w.shape().to_vec())
            )))
        }
    }
    let inputs = DocInputs::from_document(doc, model.config.max_lines, model.config.max_tokens)?;
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let logits = class_logits(&mut g, &p, &model.config, &inputs, &doc.image)?;
    Ok(g.value(logits).data().to_vec())
}

#[derive(Clone, Debug)]
pub struct ClassifierOutcome {
    /// Fine-tuned model including the `cls` head.
    pub model: Model,
    /// Fraction of `eval` documents whose argmax logit is the label.
    pub accuracy: f64,
    pub losses: Vec<f64>,
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, k| if v[k] > v[best] { k } else { best })
}

pub fn finetune_document_classifier(
    base: &Model,
    train: &[(Document, usize)],
    eval: &[(Document, usize)],
    n_classes: usize,
    cfg: &FinetuneConfig,
) -> Result<ClassifierOutcome, EvalError> {
    if let Some((d, l)) = train.iter().chain(eval).find(|(_, l)| *l >= n_classes) {
        return Err(EvalError::InvalidConfig(format!("{}: label {l} out of range for {n_classes} classes", d.doc_id)));
    }
    let mut model = base.clone();
    add_class_head(&mut model, n_classes, cfg.seed)?;
    let mcfg = model.config.clone();
    let inputs: Vec<DocInputs> = train
        .iter()
        .map(|(d, _)| DocInputs::from_document(d, mcfg.max_lines, mcfg.max_tokens))
        .collect::<Result<_, _>>()?;
    let losses = finetune_loop(&mut model.params, train.len(), cfg, |g, p, idx| {
        let rows = idx
            .iter()
            .map(|&i| class_logits(g, p, &mcfg, &inputs[i], &train[i].0.image))
            .collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<usize> = idx.iter().map(|&i| train[i].1).collect();
        let all = g.concat_rows(&rows);
        Ok(g.cross_entropy_mean(all, &labels, &vec![false; labels.len()])?)
    })?;
    let mut hits = 0;
    for (doc, label) in eval {
        if argmax(&classify_document(&model, doc, n_classes)?) == *label {
            hits += 1;
        }
    }
    let accuracy = hits as f64 / eval.len().max(1) as f64;
    Ok(ClassifierOutcome { model, accuracy, losses })
}

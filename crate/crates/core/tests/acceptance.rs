//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Tolerances are fixed here.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use docline_core::docgen::{build_vocab, generate_corpus, generate_document};
use docline_core::doclib::{load_corpus, DocInputs, IMAGE_SIZE};
use docline_core::encoders::BatchFeatures;
use docline_core::evalkit::{alignment_accuracy, document_alignment, finetune_document_classifier, finetune_token_classifier, render_alignment, TagSet};
use docline_core::numkit::{GradCheckOptions, Graph, Tensor};
use docline_core::objectives::{
    check_gradients, mlm_loss, mrm_loss, plan_masks, textline_similarity, tgm_loss, total_loss, trc_loss, GradTarget, Lambdas,
    MaskRates, MlmAction, PageLevels, PlanConfig, TgmBatch, TrcOptions,
};
use docline_core::trainkit::{ablation_ladder, checkpoint_path, pretrain, resume, TrainOutcome, CURVE_FILE};
use docline_core::{Checkpoint, Document, FinetuneConfig, GenParams, Model, ObjectiveFlags, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_ENTRIES_PER_TENSOR: usize = 8;
const GRAD_BUDGET: Duration = Duration::from_secs(5 * 60);
const TRC_TOL: f64 = 1e-10;
const SIM_TOL: f64 = 1e-12;
const PLANNER_CALLS: usize = 100_000;
const RATE_TOL: f64 = 0.01;
const CE_TOL: f64 = 1e-12;
const TGM_EXAMPLE_TOL: f64 = 1e-5;

const TRAIN_DOCS: usize = 100;
const TRAIN_STEPS: u64 = 300;
const TRAIN_BATCH: usize = 4;
/// Peak rate for the toy runs; the library default targets larger models.
const TRAIN_PEAK_LR: f64 = 3e-3;
/// Initial and final loss are means over this many steps.
const CURVE_WINDOW: usize = 10;
const TRAIN_BUDGET: Duration = Duration::from_secs(30 * 60);
const HELD_OUT_DOCS: usize = 20;
const DOWNSTREAM_BUDGET: Duration = Duration::from_secs(10 * 60);

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { name, pass, detail };
    println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    v
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut verdicts = vec![gradient_suite(), trc_oracle(), similarity_oracle(), masking_statistics(), loss_oracles()];
    let runs = training_trend(dir.path(), &mut verdicts);
    if let Some(runs) = runs {
        verdicts.push(alignment_trend(dir.path(), &runs));
        verdicts.push(downstream_trend(dir.path(), &runs.all));
    } else {
        verdicts.push(verdict("alignment-trend", false, "no trained models".into()));
        verdicts.push(verdict("downstream-trend", false, "no trained models".into()));
    }
    verdicts.push(reproducibility(dir.path()));

    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.pass).map(|v| v.name).collect();
    println!("acceptance: {} of {} criteria pass", verdicts.len() - failed.len(), verdicts.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let opts = GradCheckOptions { eps: 1e-5, max_entries_per_param: Some(GRAD_ENTRIES_PER_TENSOR) };
    let mut parts = Vec::new();
    let mut pass = true;
    for target in GradTarget::ALL {
        match check_gradients(target, 1, opts) {
            Ok(r) => {
                let e = r.max_rel_err();
                pass &= e < GRAD_TOL;
                parts.push(format!("{target} {e:.2e}"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{target} error {e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < GRAD_BUDGET;
    verdict("gradient-suite", pass, format!("max rel err [{}] < {GRAD_TOL:e}, {:.1}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, len: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..len).map(|_| rng.random_bool(0.7)).collect();
    m[rng.random_range(0..len)] = true;
    m
}

fn unit(row: &[f64]) -> Vec<f64> {
    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    row.iter().map(|v| v / n).collect()
}

/// Mean over real rows of `a` of the best dot product with a real row of `b`.
fn brute_similarity(a: &Tensor, b: &Tensor, ma: &[bool], mb: &[bool], normalize: bool) -> f64 {
    let prep = |t: &Tensor, i: usize| if normalize { unit(t.row(i)) } else { t.row(i).to_vec() };
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..ma.len() {
        if !ma[i] {
            continue;
        }
        let x = prep(a, i);
        let mut best = f64::NEG_INFINITY;
        for j in 0..mb.len() {
            if mb[j] {
                let y = prep(b, j);
                let mut dot = 0.0;
                for k in 0..x.len() {
                    dot += x[k] * y[k];
                }
                best = best.max(dot);
            }
        }
        total += best;
        count += 1;
    }
    total / count as f64
}

fn brute_trc(rho: &[Tensor], tau: &[Tensor], masks: &[Vec<bool>], opts: TrcOptions) -> f64 {
    let n = rho.len();
    let mut total = 0.0;
    for m in 0..n {
        for (q, k) in [(rho, tau), (tau, rho)] {
            let scores: Vec<f64> =
                (0..n).map(|j| brute_similarity(&q[m], &k[j], &masks[m], &masks[j], opts.normalize) / opts.temperature).collect();
            let denom: f64 = scores.iter().map(|s| s.exp()).sum();
            total += -(scores[m].exp() / denom).ln() / n as f64;
        }
    }
    0.5 * total
}

fn library_trc(rho: &[Tensor], tau: &[Tensor], masks: &[Vec<bool>], opts: TrcOptions) -> f64 {
    let mut g = Graph::new();
    let batch = BatchFeatures {
        rho: rho.iter().map(|t| g.constant(t.clone())).collect(),
        tau: tau.iter().map(|t| g.constant(t.clone())).collect(),
        pad_mask: masks.to_vec(),
    };
    let l = trc_loss(&mut g, &batch, opts).unwrap();
    g.value(l).item()
}

fn trc_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for trial in 0..500 {
        let (n, l, d) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=8));
        let rho: Vec<Tensor> = (0..n).map(|_| random_tensor(&mut rng, l, d)).collect();
        let tau: Vec<Tensor> = (0..n).map(|_| random_tensor(&mut rng, l, d)).collect();
        let masks: Vec<Vec<bool>> = (0..n).map(|_| random_mask(&mut rng, l)).collect();
        let opts = match trial % 3 {
            0 => TrcOptions::default(),
            1 => TrcOptions { normalize: false, temperature: 1.0 },
            _ => TrcOptions { normalize: true, temperature: rng.random_range(0.05..2.0) },
        };
        worst = worst.max((library_trc(&rho, &tau, &masks, opts) - brute_trc(&rho, &tau, &masks, opts)).abs());
    }
    let single = random_tensor(&mut rng, 3, 5);
    let n1 = library_trc(std::slice::from_ref(&single), std::slice::from_ref(&single), &[vec![true; 3]], TrcOptions::default());
    let a = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
    let b = Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap();
    let orth = library_trc(&[a.clone(), b.clone()], &[a, b], &[vec![true], vec![true]], TrcOptions::default());
    let pass = worst < TRC_TOL && n1.abs() < TRC_TOL && (orth - 0.31326).abs() < 1e-5;
    verdict("trc-oracle", pass, format!("500 batches max |diff| {worst:.1e} < {TRC_TOL:e}; N=1 -> {n1:e}; orthogonal N=2 -> {orth:.5}"))
}

fn similarity_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut worst_pad): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let (la, lb, d) = (rng.random_range(1..=10), rng.random_range(1..=10), rng.random_range(1..=16));
        let (a, b) = (random_tensor(&mut rng, la, d), random_tensor(&mut rng, lb, d));
        let (ma, mb) = (random_mask(&mut rng, la), random_mask(&mut rng, lb));
        let s = textline_similarity(&a, &b, &ma, &mb).unwrap();
        worst = worst.max((s - brute_similarity(&a, &b, &ma, &mb, true)).abs());

        let pad = |rng: &mut ChaCha8Rng, t: &Tensor, m: &[bool]| {
            let extra = rng.random_range(1..=5);
            let mut rows: Vec<Vec<f64>> = (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect();
            rows.extend((0..extra).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()));
            let mut mask = m.to_vec();
            mask.extend(vec![false; extra]);
            (Tensor::from_rows(&rows).unwrap(), mask)
        };
        let (pa, pma) = pad(&mut rng, &a, &ma);
        let (pb, pmb) = pad(&mut rng, &b, &mb);
        worst_pad = worst_pad.max((textline_similarity(&pa, &pb, &pma, &pmb).unwrap() - s).abs());
    }
    let pass = worst < SIM_TOL && worst_pad < SIM_TOL;
    verdict("similarity-oracle", pass, format!("100 instances max |diff| {worst:.1e}, padded-line drift {worst_pad:.1e}, tolerance {SIM_TOL:e}"))
}

fn masking_statistics() -> Verdict {
    let params = GenParams { seed: 3, ..GenParams::default() };
    let vocab = build_vocab(&params);
    let docs: Vec<Document> = (0..100).map(|i| generate_document(&params, i).unwrap()).collect();
    let cfg = PlanConfig { rates: MaskRates::default(), replacement_ids: vocab.regular_ids(), grid: Default::default() };
    let prepared: Vec<(DocInputs, PageLevels)> =
        docs.iter().map(|d| (DocInputs::from_document(d, 64, 512).unwrap(), PageLevels::estimate(&d.image))).collect();

    let (mut tokens, mut selected, mut masked, mut random, mut kept) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let (mut background, mut sampled) = (0u64, 0u64);
    let mut violations = 0u64;
    for call in 0..PLANNER_CALLS {
        let k = call % docs.len();
        let (inputs, levels) = &prepared[k];
        let image = &docs[k].image;
        let plan = plan_masks(inputs, image, levels, &cfg, call as u64).unwrap();

        tokens += inputs.membership.iter().filter(|m| m.is_some()).count() as u64;
        selected += plan.mlm.len() as u64;
        for t in &plan.mlm {
            match t.action {
                MlmAction::Mask => masked += 1,
                MlmAction::Random(_) => random += 1,
                MlmAction::Keep => kept += 1,
            }
        }

        let mask = plan.mrm_pixel_mask();
        let covered: Vec<_> = plan.mlm_covered_boxes.iter().map(|b| b.pixel_span(IMAGE_SIZE)).collect();
        let inside = |spans: &[(usize, usize, usize, usize)], x: usize, y: usize| spans.iter().any(|&(a, b, c, d)| a <= x && x < c && b <= y && y < d);
        let line_spans: Vec<_> = plan.mrm_lines.iter().map(|&l| inputs.line_bboxes[l].pixel_span(IMAGE_SIZE)).collect();
        let threshold = levels.stroke_threshold();
        let mut seen = vec![false; IMAGE_SIZE * IMAGE_SIZE];
        for &(x0, y0, x1, y1) in &line_spans {
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * IMAGE_SIZE + x;
                    if seen[i] || inside(&covered, x, y) || image.data()[i] < threshold {
                        continue;
                    }
                    seen[i] = true;
                    background += 1;
                    sampled += mask[i] as u64;
                }
            }
        }

        let mlm_lines: BTreeSet<usize> = plan.mlm.iter().filter_map(|t| inputs.membership[t.position]).collect();
        let mrm_lines: BTreeSet<usize> = plan.mrm_lines.iter().copied().collect();
        let positions: BTreeSet<usize> = plan.mlm.iter().map(|t| t.position).collect();
        let disjoint = plan.tgm_lines.iter().all(|l| !mlm_lines.contains(l) && !mrm_lines.contains(l))
            && positions.len() == plan.mlm.len()
            && plan.mlm.iter().all(|t| inputs.membership[t.position].is_some())
            && plan.tgm_positions.iter().all(|&p| inputs.membership[p].is_some_and(|l| plan.tgm_lines.contains(&l)))
            && plan.mrm_pixels.iter().all(|&i| {
                let (x, y) = (i as usize % IMAGE_SIZE, i as usize / IMAGE_SIZE);
                !inside(&covered, x, y) && inside(&line_spans, x, y)
            });
        violations += !disjoint as u64;
    }

    let rate = selected as f64 / tokens as f64;
    let bg = sampled as f64 / background as f64;
    let split = [masked, random, kept].map(|c| c as f64 / selected as f64);
    let near = |v: f64, want: f64| (v - want).abs() <= RATE_TOL;
    let pass = near(rate, 0.15) && near(bg, 0.15) && near(split[0], 0.8) && near(split[1], 0.1) && near(split[2], 0.1) && violations == 0;
    verdict(
        "masking-statistics",
        pass,
        format!(
            "{PLANNER_CALLS} plans: MLM rate {rate:.4}, MRM background rate {bg:.4}, actions {:.4}/{:.4}/{:.4} (tolerance {RATE_TOL}), {violations} disjointness violations",
            split[0], split[1], split[2]
        ),
    )
}

fn loss_oracles() -> Verdict {
    let mut g = Graph::new();
    let uniform = g.constant(Tensor::zeros(&[5, 49]));
    let ce = g.cross_entropy_mean(uniform, &[0, 7, 13, 48, 21], &[false; 5]).unwrap();
    let ce = g.value(ce).item();
    let ce_ok = (ce - 49f64.ln()).abs() < CE_TOL && (ce - 3.89182).abs() < 1e-5;

    let logits = g.constant(Tensor::new(&[2, 4], vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
    let tgm = tgm_loss(&mut g, &TgmBatch { logits: vec![Some(logits)], labels: vec![vec![0, 3]] }).unwrap().unwrap();
    let tgm = g.value(tgm).item();
    let tgm_ok = (tgm - 1.72705).abs() < TGM_EXAMPLE_TOL;

    // Dyadic pixel values keep the offset arithmetic exact.
    let original = Tensor::new(&[1, IMAGE_SIZE, IMAGE_SIZE], (0..IMAGE_SIZE * IMAGE_SIZE).map(|i| (i % 193) as f64 / 256.0).collect()).unwrap();
    let mask: Vec<bool> = (0..IMAGE_SIZE * IMAGE_SIZE).map(|i| i % 7 == 3).collect();
    let mut shifted = original.clone();
    for (i, v) in shifted.data_mut().iter_mut().enumerate() {
        *v = if mask[i] { *v + 0.25 } else { -3.0 };
    }
    let recon = g.constant(shifted);
    let mrm = mrm_loss(&mut g, recon, &original, &mask).unwrap();
    let mrm = g.value(mrm).item();
    let same = g.constant(original.clone());
    let zero = mrm_loss(&mut g, same, &original, &mask).unwrap();
    let mrm_ok = mrm == 0.25 && g.value(zero).item() == 0.0;

    let r = total_loss(2.0, 0.5, 0.3, 0.4, Lambdas::default()).unwrap();
    let no_trc = Lambdas { trc: 0.0, ..Lambdas::default() };
    let total_ok = r.total == 2.0 + 0.2 * 0.5 + 1.0 * 0.3 + 1.0 * 0.4
        && (r.total - 2.8).abs() < 1e-15
        && total_loss(1.0, 5.0, 0.5, 0.5, no_trc).unwrap().total == total_loss(1.0, 50.0, 0.5, 0.5, no_trc).unwrap().total;

    let mlm_flat = g.constant(Tensor::zeros(&[3, 256]));
    let mlm = mlm_loss(&mut g, mlm_flat, &[4, 100, 255]).unwrap();
    let mlm_ok = (g.value(mlm).item() - 256f64.ln()).abs() < CE_TOL;

    verdict(
        "loss-oracles",
        ce_ok && tgm_ok && mrm_ok && total_ok && mlm_ok,
        format!(
            "uniform CE G=49 {ce:.12} (ln 49 {:.12}); TGM example {tgm:.5}; MRM offset {mrm}; total {} ; MLM uniform V=256 ok={mlm_ok}",
            49f64.ln(),
            r.total
        ),
    )
}

fn gen_corpus(root: &Path, params: &GenParams, count: usize) -> PathBuf {
    generate_corpus(params, count, root).unwrap();
    root.to_path_buf()
}

fn train_config(corpus: &Path, out: &Path, flags: ObjectiveFlags, steps: u64) -> TrainConfig {
    let mut cfg = TrainConfig { corpus: corpus.to_path_buf(), out_dir: out.to_path_buf(), batch_size: TRAIN_BATCH, seed: 0, ..TrainConfig::default() };
    cfg.schedule.total_steps = steps;
    cfg.schedule.peak_lr = TRAIN_PEAK_LR;
    cfg.objectives.enabled = flags;
    cfg
}

struct Runs {
    all: Model,
    without_trc: Model,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn training_trend(dir: &Path, verdicts: &mut Vec<Verdict>) -> Option<Runs> {
    let corpus = gen_corpus(&dir.join("train"), &GenParams { seed: 1, ..GenParams::default() }, TRAIN_DOCS);
    let start = Instant::now();
    let mut outcomes: Vec<(&str, TrainOutcome)> = Vec::new();
    let mut errors = Vec::new();
    for (name, flags) in ablation_ladder() {
        let t = Instant::now();
        match pretrain(&train_config(&corpus, &dir.join(format!("run-{name}")), flags, TRAIN_STEPS)) {
            Ok(o) => {
                println!("  run {name}: {} steps in {:.0}s", o.records.len(), t.elapsed().as_secs_f64());
                outcomes.push((name, o));
            }
            Err(e) => errors.push(format!("{name}: {e}")),
        }
    }
    let elapsed = start.elapsed();

    let mut comparable = errors.is_empty();
    let mut summaries = Vec::new();
    for (name, o) in &outcomes {
        let curve = fs::read_to_string(&o.curve_path).unwrap_or_default();
        let rows: Vec<Vec<f64>> =
            curve.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()).collect();
        let flags = ablation_ladder().iter().find(|(n, _)| n == name).unwrap().1;
        let toggles = [flags.mlm, flags.trc, flags.mrm, flags.tgm];
        let rows_ok = rows.len() == TRAIN_STEPS as usize
            && rows.iter().enumerate().all(|(i, r)| {
                r.len() == 7 && r[0] == (i + 1) as f64 && r.iter().all(|v| v.is_finite()) && (0..4).all(|k| toggles[k] || r[1 + k] == 0.0)
            });
        comparable &= rows_ok;
        let totals: Vec<f64> = rows.iter().map(|r| r[5]).collect();
        if totals.len() >= 2 * CURVE_WINDOW {
            summaries.push(format!(
                "{name} {:.2}->{:.2}",
                mean(&totals[..CURVE_WINDOW]),
                mean(&totals[totals.len() - CURVE_WINDOW..])
            ));
        }
    }
    verdicts.push(verdict(
        "ablation-curves",
        comparable && elapsed < TRAIN_BUDGET,
        format!("{} of 4 ablation runs wrote {TRAIN_STEPS}-row curves [{}] {:.0}s{}", outcomes.len(), summaries.join(", "), elapsed.as_secs_f64(), if errors.is_empty() { String::new() } else { format!(" errors: {}", errors.join("; ")) }),
    ));

    let full = outcomes.iter().find(|(n, _)| *n == "all");
    let halving = full.map(|(_, o)| {
        let totals: Vec<f64> = o.records.iter().map(|r| r.report.total).collect();
        (mean(&totals[..CURVE_WINDOW]), mean(&totals[totals.len() - CURVE_WINDOW..]))
    });
    let (pass, detail) = match halving {
        Some((first, last)) => (
            last <= 0.5 * first && elapsed < TRAIN_BUDGET,
            format!("all objectives, {TRAIN_DOCS} docs, N={TRAIN_BATCH}, {TRAIN_STEPS} steps: total loss {first:.3} -> {last:.3} (ratio {:.3}, need <= 0.5), {:.0}s", last / first, elapsed.as_secs_f64()),
        ),
        None => (false, "full-objective run did not finish".into()),
    };
    verdicts.push(verdict("training-halves-loss", pass, detail));

    let all = full.map(|(_, o)| o.model.clone())?;
    let without_trc = outcomes.iter().find(|(n, _)| *n == "mlm+mrm").map(|(_, o)| o.model.clone())?;
    Some(Runs { all, without_trc })
}

fn alignment_trend(dir: &Path, runs: &Runs) -> Verdict {
    let held_out = load_corpus(&gen_corpus(&dir.join("held-out"), &GenParams { seed: 2, ..GenParams::default() }, HELD_OUT_DOCS)).unwrap();
    let docs = &held_out.documents;
    let on = alignment_accuracy(&runs.all, docs).unwrap();
    let off = alignment_accuracy(&runs.without_trc, docs).unwrap();
    let baseline = on.random_baseline();

    let entry = document_alignment(&runs.all, &docs[0]).unwrap();
    let a = render_alignment(&docs[0], &entry, &dir.join("overlay-a.png")).unwrap();
    let b = render_alignment(&docs[0], &entry, &dir.join("overlay-b.png")).unwrap();
    let deterministic = a == b && fs::read(dir.join("overlay-a.png")).unwrap() == fs::read(dir.join("overlay-b.png")).unwrap();

    let pass = on.accuracy > 5.0 * baseline && off.accuracy <= 2.0 * baseline && deterministic;
    verdict(
        "alignment-trend",
        pass,
        format!(
            "{HELD_OUT_DOCS} held-out docs, baseline 1/L = {baseline:.3}: with TRC {:.3} (need > {:.3}), without TRC {:.3} (need <= {:.3}); overlays deterministic: {deterministic}",
            on.accuracy,
            5.0 * baseline,
            off.accuracy,
            2.0 * baseline
        ),
    )
}

fn downstream_trend(dir: &Path, base: &Model) -> Verdict {
    let start = Instant::now();
    let cfg = FinetuneConfig::default();
    let tagged = GenParams { seed: 77, first_line_tag: Some("X".into()), ..GenParams::default() };
    let ner = load_corpus(&gen_corpus(&dir.join("ner"), &tagged, 100)).unwrap();
    let tags = TagSet::from_documents(&ner.documents).unwrap();
    let (train, eval) = ner.documents.split_at(80);
    let f1 = finetune_token_classifier(base, train, eval, &tags, &cfg).unwrap().f1().unwrap_or(0.0);

    let short = GenParams { seed: 78, lines_range: [2, 4], ..GenParams::default() };
    let long = GenParams { seed: 79, lines_range: [8, 10], ..GenParams::default() };
    let a = load_corpus(&gen_corpus(&dir.join("class-short"), &short, 50)).unwrap().documents;
    let b = load_corpus(&gen_corpus(&dir.join("class-long"), &long, 50)).unwrap().documents;
    let labeled = |docs: &[Document], label| docs.iter().map(|d| (d.clone(), label)).collect::<Vec<_>>();
    let train: Vec<(Document, usize)> = [labeled(&a[..40], 0), labeled(&b[..40], 1)].concat();
    let eval: Vec<(Document, usize)> = [labeled(&a[40..], 0), labeled(&b[40..], 1)].concat();
    let acc = finetune_document_classifier(base, &train, &eval, 2, &cfg).unwrap().accuracy;
    let elapsed = start.elapsed();

    verdict(
        "downstream-trend",
        f1 >= 0.9 && acc >= 0.9 && elapsed < DOWNSTREAM_BUDGET,
        format!("BIO entity F1 {f1:.3} (need >= 0.9), 2-class accuracy {acc:.3} (need >= 0.9), {:.0}s", elapsed.as_secs_f64()),
    )
}

fn reproducibility(dir: &Path) -> Verdict {
    let corpus = gen_corpus(&dir.join("repro"), &GenParams { seed: 4, ..GenParams::default() }, 12);
    let steps = 6;
    let run = |name: &str| {
        let mut cfg = train_config(&corpus, &dir.join(name), ObjectiveFlags::ALL, steps);
        cfg.checkpoint_interval = 3;
        pretrain(&cfg).unwrap();
        cfg
    };
    let read = |cfg: &TrainConfig| (fs::read(checkpoint_path(&cfg.out_dir, steps)).unwrap(), fs::read(cfg.out_dir.join(CURVE_FILE)).unwrap());
    let a = run("repro-a");
    let b = run("repro-b");
    let identical = read(&a) == read(&b);

    let c = run("repro-c");
    let mid = Checkpoint::load(&checkpoint_path(&c.out_dir, 3)).unwrap();
    resume(&mid, &c).unwrap();
    let resumed = read(&c) == read(&a);

    verdict(
        "reproducibility",
        identical && resumed,
        format!("two identical {steps}-step runs bitwise equal: {identical}; resume from step 3 equals straight run: {resumed}"),
    )
}

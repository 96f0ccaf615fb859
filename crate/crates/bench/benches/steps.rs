use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use docline_core::docgen::{build_vocab, generate_document};
use docline_core::doclib::DocInputs;
use docline_core::numkit::{Graph, Tensor};
use docline_core::objectives::{batch_losses, micro_batch, plan_document, textline_similarity, ObjectiveConfig, PlanConfig, PlannedDoc};
use docline_core::{GenParams, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// First convolution stage of the image stream at full page size.
fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(&[1, 224, 224], &mut rng);
    let w = random(&[8, 1, 3, 3], &mut rng);
    let b = random(&[8], &mut rng);
    c.bench_function("conv2d 1x224x224 -> 8, fwd+bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (x, w, b) = (g.constant(x.clone()), g.param(w.clone()), g.param(b.clone()));
            let y = g.conv2d(x, w, b, 2, 1).unwrap();
            let loss = g.sum(y);
            black_box(g.backward(loss));
        })
    });
}

fn similarity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rho = random(&[10, 64], &mut rng);
    let tau = random(&[10, 64], &mut rng);
    let mask = [true, true, true, true, true, true, true, false, false, false];
    c.bench_function("textline_similarity L=10 d=64", |bench| {
        bench.iter(|| black_box(textline_similarity(&rho, &tau, &mask, &mask).unwrap()))
    });
}

fn step(c: &mut Criterion, name: &str, model: &Model, docs: &[PlannedDoc]) {
    let cfg = ObjectiveConfig::default();
    c.bench_function(name, |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let p = model.params.bind(&mut g);
            let (vars, _) = batch_losses(&mut g, &p, &model.config, &cfg, docs).unwrap();
            black_box(g.backward(vars.total));
        })
    });
}

/// Forward and backward of all four objectives, at micro and default size.
fn training_step(c: &mut Criterion) {
    let (model, docs) = micro_batch(0).unwrap();
    step(c, "train step micro (N=2)", &model, &docs);

    let params = GenParams::default();
    let vocab = build_vocab(&params);
    let model = Model::init(ModelConfig { vocab_size: vocab.len(), ..ModelConfig::default() }, 0).unwrap();
    let plan = PlanConfig { rates: Default::default(), replacement_ids: vocab.regular_ids(), grid: model.config.grid };
    let docs: Vec<PlannedDoc> = (0..4)
        .map(|i| {
            let doc = generate_document(&params, i).unwrap();
            let inputs = DocInputs::from_document(&doc, model.config.max_lines, model.config.max_tokens).unwrap();
            plan_document(&doc, inputs, &plan, i).unwrap()
        })
        .collect();
    step(c, "train step default (N=4)", &model, &docs);
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, similarity, training_step
}
criterion_main!(benches);

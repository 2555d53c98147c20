use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use domexp_core::data::generate_domains;
use domexp_core::expansion::{
    ensemble_weights, overall_loss, update_round, EnsembleState, Hyperparams,
};
use domexp_core::fusion::{fuse_baseline, fuse_m1, fuse_m2};
use domexp_core::pipeline::model_rng;
use domexp_core::{MlpModel, SyntheticDomainConfig};
use ndarray::{s, Array2};

/// Three freshly initialized benchmark-sized models and the new-domain features.
fn setup() -> (Vec<MlpModel>, Array2<f64>) {
    let cfg = SyntheticDomainConfig::default();
    let domains = generate_domains(&cfg).unwrap();
    let data = domains.last().unwrap().features().clone();
    let models = (0..3)
        .map(|i| {
            MlpModel::init(
                cfg.feature_dim,
                &[1000],
                cfg.num_classes,
                &mut model_rng(1, i),
            )
            .unwrap()
        })
        .collect();
    (models, data)
}

fn bench_model(c: &mut Criterion) {
    let (models, data) = setup();
    let batch = data.slice(s![..64, ..]);
    let model = &models[0];
    c.bench_function("forward_logits/64x10->1000->5", |b| {
        b.iter(|| black_box(model.forward_logits(black_box(batch)).unwrap()))
    });
    let (logits, cache) = model.forward_logits(batch).unwrap();
    c.bench_function("backward/64x10->1000->5", |b| {
        b.iter(|| black_box(model.backward(&cache, black_box(logits.view())).unwrap()))
    });
}

fn bench_losses(c: &mut Criterion) {
    let (models, data) = setup();
    let ensemble = EnsembleState::new(models).unwrap();
    let hp = Hyperparams::default();
    let batch = data.slice(s![..64, ..]);
    let weights = ensemble_weights(&ensemble, batch, &hp).unwrap();
    c.bench_function("overall_loss/m3/batch64", |b| {
        b.iter(|| black_box(overall_loss(&ensemble, 1, black_box(batch), &weights, &hp).unwrap()))
    });
    c.bench_function("ensemble_weights/m3/n1000", |b| {
        b.iter(|| black_box(ensemble_weights(&ensemble, data.view(), &hp).unwrap()))
    });
}

fn bench_fusion(c: &mut Criterion) {
    let (models, data) = setup();
    let view = data.view();
    c.bench_function("fuse_baseline/m3/n1000", |b| {
        b.iter(|| black_box(fuse_baseline(&models, view).unwrap()))
    });
    c.bench_function("fuse_m1/m3/n1000", |b| {
        b.iter(|| black_box(fuse_m1(&models, view).unwrap()))
    });
    c.bench_function("fuse_m2/m3/n1000", |b| {
        b.iter(|| black_box(fuse_m2(&models, &models, view).unwrap()))
    });
}

fn bench_round(c: &mut Criterion) {
    let (models, data) = setup();
    let ensemble = EnsembleState::new(models).unwrap();
    let hp = Hyperparams {
        learning_rate: 0.5,
        ..Hyperparams::default()
    };
    let mut group = c.benchmark_group("update_round");
    group.sample_size(10);
    group.bench_function("m3/n1000/batch64", |b| {
        b.iter_batched(
            || ensemble.clone(),
            |e| black_box(update_round(e, data.view(), &hp).unwrap()),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_model,
    bench_losses,
    bench_fusion,
    bench_round
);
criterion_main!(benches);

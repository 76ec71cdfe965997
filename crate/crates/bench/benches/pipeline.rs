use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use labgan::evaluate::predictivity_error;
use labgan::gan::{train_gan, GanTrainConfig};
use labgan::stratify::jacobi::jacobi_eigen;
use labgan::stratify::{tsne, TsneConfig};
use labgan::SeriesLayout;
use labgan_bench::{blobs, symmetric, uniform_series};

fn p_err(c: &mut Criterion) {
    let layout = SeriesLayout::default();
    let real = uniform_series(200, layout, 1);
    let synth = uniform_series(2000, layout, 2);
    c.bench_function("predictivity_error 200x2000", |b| {
        b.iter(|| predictivity_error(black_box(&real), black_box(&synth), layout).unwrap())
    });
}

fn tsne_layout(c: &mut Criterion) {
    let points = blobs(200, 8, 4, 3);
    let cfg = TsneConfig { iterations: 250, ..Default::default() };
    let mut group = c.benchmark_group("tsne");
    group.sample_size(10);
    group.bench_function("200 points, 250 iterations", |b| {
        b.iter(|| tsne(points.view(), &cfg, 0).unwrap())
    });
    group.finish();
}

fn jacobi(c: &mut Criterion) {
    let m = symmetric(64, 4);
    c.bench_function("jacobi_eigen 64x64", |b| {
        b.iter_batched(|| m.clone(), |m| jacobi_eigen(&m).unwrap(), BatchSize::SmallInput)
    });
}

fn gan_epoch(c: &mut Criterion) {
    let layout = SeriesLayout::default();
    let data = uniform_series(200, layout, 5);
    let cfg = GanTrainConfig { epochs: 1, ae_pretrain_epochs: 1, ..Default::default() };
    let mut group = c.benchmark_group("gan");
    group.sample_size(10);
    group.bench_function("one epoch, 200 series", |b| {
        b.iter(|| train_gan(black_box(&data), layout, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, p_err, tsne_layout, jacobi, gan_epoch);
criterion_main!(benches);

//! Sequential vs rayon for the three data-parallel hot paths: batched
//! convolution, corpus evaluation and dataset synthesis.
//!
//! `cargo bench -p derain-core --bench parallel`; with
//! `--no-default-features` both arms run the sequential loop.

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use derain_core::autodiff::conv::{conv2d_backward, conv2d_forward};
use derain_core::autodiff::ConvGeom;
use derain_core::io::{encode_image, DatasetLayout};
use derain_core::metrics::{evaluate_corpus, Metric};
use derain_core::parallel;
use derain_core::rain::{build_dataset, composite, render_streaks, synthetic_scene, RainParams, SynthOptions};
use derain_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

const MODES: [(&str, bool); 2] = [("sequential", true), ("parallel", false)];

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3_64ch");
    group.sample_size(10);
    for batch in [1usize, 4, 8] {
        let x = random(&[batch, 64, 32, 32], 1);
        let k = random(&[64, 64, 3, 3], 2);
        let b = Tensor::zeros(&[64]);
        let g = ConvGeom::new(1, 1);
        for (name, seq) in MODES {
            parallel::set_sequential(seq);
            group.bench_with_input(BenchmarkId::new(format!("{name}/forward"), batch), &x, |bn, x| {
                bn.iter(|| conv2d_forward(black_box(x), &k, &b, g).unwrap())
            });
            let y = conv2d_forward(&x, &k, &b, g).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("{name}/backward"), batch), &x, |bn, x| {
                bn.iter(|| conv2d_backward(black_box(x), &k, &y, g, [true, true, true]).unwrap())
            });
        }
    }
    parallel::set_sequential(false);
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let layout = DatasetLayout::new(dir.path());
    std::fs::create_dir_all(layout.clean_dir()).unwrap();
    std::fs::create_dir_all(layout.rainy_dir()).unwrap();
    for i in 0..8u64 {
        let clean = synthetic_scene(96, i);
        let field = render_streaks(&RainParams { seed: i, ..Default::default() }, 96, 96).unwrap();
        let name = format!("{i}.png");
        encode_image(&clean, layout.clean_dir().join(&name)).unwrap();
        encode_image(&composite(&clean, &field).unwrap(), layout.rainy_dir().join(&name)).unwrap();
    }
    let pairs = layout.pairs().unwrap();

    let mut group = c.benchmark_group("evaluate_corpus_8x96");
    group.sample_size(10);
    for (name, seq) in MODES {
        parallel::set_sequential(seq);
        group.bench_function(name, |bn| bn.iter(|| evaluate_corpus(black_box(&pairs), &Metric::ALL).unwrap()));
    }
    parallel::set_sequential(false);
    group.finish();
}

fn bench_synthesis(c: &mut Criterion) {
    let src = tempfile::tempdir().unwrap();
    for i in 0..4u64 {
        encode_image(&synthetic_scene(128, i), src.path().join(format!("s{i}.png"))).unwrap();
    }
    let opts = SynthOptions { count: 16, seed: 3, size: 64, ..Default::default() };

    let mut group = c.benchmark_group("build_dataset_16x64");
    group.sample_size(10);
    for (name, seq) in MODES {
        parallel::set_sequential(seq);
        group.bench_function(name, |bn| {
            bn.iter_batched(
                || tempfile::tempdir().unwrap(),
                |out| build_dataset(src.path(), out.path(), &opts).unwrap(),
                BatchSize::PerIteration,
            )
        });
    }
    parallel::set_sequential(false);
    group.finish();
}

criterion_group!(benches, bench_conv, bench_metrics, bench_synthesis);
criterion_main!(benches);

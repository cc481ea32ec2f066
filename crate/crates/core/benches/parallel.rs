//! Parallel vs sequential throughput on the hot kernels.
//!
//! Parallelism in this crate is bit-exact by construction, so the comparison
//! is run inside rayon pools of different sizes: a 1-thread pool is the
//! sequential baseline (the same code the non-`parallel` build runs, plus
//! pool overhead), the default pool is the parallel lane.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use spursever_core::difficulty::score_dataset;
use spursever_core::nn::{Architecture, Network, TrainConfig};
use spursever_core::testbed::{generate_base, BaseParams, GridShape, NoiseSpread, Split};

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

fn bench_generate(c: &mut Criterion) {
    let params = BaseParams {
        classes: 10,
        n_per_class: 200,
        grid: GridShape {
            height: 32,
            width: 32,
            channels: 3,
        },
        noise: NoiseSpread::uniform(0.0, 0.8),
        seed: 1,
        split: Split::Train,
    };
    let mut group = c.benchmark_group("generate_base");
    for threads in [1usize, 0] {
        let label = if threads == 1 { "seq" } else { "par" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            let p = pool(if t == 0 { num_threads_default() } else { t });
            b.iter(|| p.install(|| generate_base(&params).unwrap()));
        });
    }
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let data = generate_base(&BaseParams {
        classes: 10,
        n_per_class: 100,
        grid: GridShape {
            height: 32,
            width: 32,
            channels: 3,
        },
        noise: NoiseSpread::uniform(0.0, 0.8),
        seed: 2,
        split: Split::Train,
    })
    .unwrap();
    let arch = Architecture::mlp_default(data.feature_dim(), data.classes());
    let net = Network::seeded(arch, 3).unwrap();
    let positions: Vec<usize> = (0..512).collect();
    let mut feats = vec![0.0f32; positions.len() * data.feature_dim()];
    data.fill_normalized_rows(&positions, &mut feats);

    let mut group = c.benchmark_group("forward_512");
    for threads in [1usize, 0] {
        let label = if threads == 1 { "seq" } else { "par" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            let p = pool(if t == 0 { num_threads_default() } else { t });
            b.iter(|| p.install(|| net.forward_probs(&feats).unwrap()));
        });
    }
    group.finish();
}

fn bench_train_epoch(c: &mut Criterion) {
    let data = generate_base(&BaseParams {
        classes: 10,
        n_per_class: 100,
        grid: GridShape {
            height: 32,
            width: 32,
            channels: 3,
        },
        noise: NoiseSpread::uniform(0.0, 0.8),
        seed: 4,
        split: Split::Train,
    })
    .unwrap();
    let arch = Architecture::mlp_default(data.feature_dim(), data.classes());
    let cfg = TrainConfig {
        epochs: 1,
        difficulty_epoch: 0,
        lr_milestones: vec![],
        seed: 5,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train_epoch_1000x3072");
    group.sample_size(10);
    for threads in [1usize, 0] {
        let label = if threads == 1 { "seq" } else { "par" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            let p = pool(if t == 0 { num_threads_default() } else { t });
            b.iter(|| {
                p.install(|| {
                    spursever_core::nn::train_from_seed(&arch, &data, &cfg, None).unwrap()
                })
            });
        });
    }
    group.finish();
}

fn bench_score(c: &mut Criterion) {
    let data = generate_base(&BaseParams {
        classes: 10,
        n_per_class: 200,
        grid: GridShape {
            height: 32,
            width: 32,
            channels: 3,
        },
        noise: NoiseSpread::uniform(0.0, 0.8),
        seed: 6,
        split: Split::Train,
    })
    .unwrap();
    let arch = Architecture::mlp_default(data.feature_dim(), data.classes());
    let net = Network::seeded(arch, 7).unwrap();
    let mut group = c.benchmark_group("score_dataset_2000");
    for threads in [1usize, 0] {
        let label = if threads == 1 { "seq" } else { "par" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            let p = pool(if t == 0 { num_threads_default() } else { t });
            b.iter(|| p.install(|| score_dataset(&net, &data, 1).unwrap()));
        });
    }
    group.finish();
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(2)
}

criterion_group!(
    benches,
    bench_generate,
    bench_forward,
    bench_train_epoch,
    bench_score
);
criterion_main!(benches);

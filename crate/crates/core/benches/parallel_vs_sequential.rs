//! Data-parallel stages on a single-thread pool versus the full pool.
//!
//! For the fully sequential build, run with `--no-default-features`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::ThreadPoolBuilder;

use cascade_spotter_core::features::assemble_features;
use cascade_spotter_core::influence::{influence_report, parent_probabilities, KernelParams};
use cascade_spotter_core::ingest::{aggregate_users, build_cascades, Cascade, Corpus};
use cascade_spotter_core::labeler::{train, SearchConfig, SearchSpace};
use cascade_spotter_core::synthetic::{random_cascade, separable_dataset, synthetic_dump, DumpConfig};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let full = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut sizes = vec![1];
    if full > 1 {
        sizes.push(full);
    }
    sizes
        .into_iter()
        .map(|n| {
            let pool = ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            (format!("{n}-threads"), pool)
        })
        .collect()
}

fn cascades(count: usize, max_n: usize) -> Vec<Cascade> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..count)
        .map(|k| {
            let n = rng.random_range(1..=max_n);
            random_cascade(&mut rng, &k.to_string(), n, 10_000_000, 2000.0)
        })
        .collect()
}

fn bench_influence(c: &mut Criterion) {
    let data = cascades(2000, 400);
    let exp = KernelParams::default();
    let plaw = KernelParams::power_law(1.0, 0.8, 1.0, 10.0);
    let mut g = c.benchmark_group("influence_report");
    for (name, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("exponential", &name), &data, |b, d| {
            b.iter(|| pool.install(|| black_box(influence_report(d, &exp).unwrap())))
        });
        g.bench_with_input(BenchmarkId::new("power_law", &name), &data, |b, d| {
            b.iter(|| pool.install(|| black_box(influence_report(d, &plaw).unwrap())))
        });
    }
    g.finish();

    let big = random_cascade(&mut ChaCha8Rng::seed_from_u64(2), "big", 3000, 10_000_000, 50.0);
    let mut g = c.benchmark_group("dense_parent_probabilities_3000");
    for (name, pool) in pools() {
        g.bench_function(&name, |b| {
            b.iter(|| pool.install(|| black_box(parent_probabilities(&big, &exp).unwrap())))
        });
    }
    g.finish();
}

fn bench_features(c: &mut Criterion) {
    let dump = synthetic_dump(&DumpConfig::default());
    let mut corpus = Corpus::new();
    corpus.read_from(dump.text().as_bytes()).unwrap();
    let users = aggregate_users(&corpus.tweets, &build_cascades(&corpus.tweets));
    let text = dump.text();
    let mut g = c.benchmark_group("ingest_and_features_10k");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("ingest", &name), |b| {
            b.iter(|| {
                pool.install(|| {
                    let mut corpus = Corpus::new();
                    corpus.read_from(text.as_bytes()).unwrap();
                    black_box(corpus)
                })
            })
        });
        g.bench_function(BenchmarkId::new("features", &name), |b| {
            b.iter(|| pool.install(|| black_box(assemble_features(&users, None, 1000, 0))))
        });
    }
    g.finish();
}

fn bench_search(c: &mut Criterion) {
    let (x, y) = separable_dataset(1000, 8, 0.0, 3);
    let cfg = SearchConfig {
        space: SearchSpace {
            rounds: vec![30],
            ..SearchSpace::default()
        },
        draws: 6,
        folds: 5,
        seed: 1,
    };
    let mut g = c.benchmark_group("random_search_cv");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(&name, |b| b.iter(|| pool.install(|| black_box(train(&x, &y, &cfg).unwrap()))));
    }
    g.finish();
}

criterion_group!(benches, bench_influence, bench_features, bench_search);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simba_core::pearson_ols;

fn single_pass(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-40.0..40.0)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| 0.1 * x + rng.random_range(-5.0..5.0))
        .collect();
    let mut group = c.benchmark_group("stats");
    group.throughput(Throughput::Elements(xs.len() as u64));
    group.bench_function("pearson_ols_10k", |b| {
        b.iter(|| black_box(pearson_ols(black_box(&xs), black_box(&ys)).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, single_pass);
criterion_main!(benches);

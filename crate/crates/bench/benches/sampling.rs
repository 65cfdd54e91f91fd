use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fedsim_bench::feasible_probs;
use fedsim_core::sampling::{
    cap_and_normalize, sequential_wor_inclusion, systematic_sample, ProbabilityVector,
};
use fedsim_core::seeding;

fn bench_systematic(c: &mut Criterion) {
    let mut group = c.benchmark_group("systematic_sample");
    for &(n, m) in &[(100usize, 10usize), (1000, 50), (10_000, 100)] {
        let probs = feasible_probs(n, m, 42);
        let mut rng = seeding::stream(7);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("n{n}_m{m}")),
            &probs,
            |b, p| b.iter(|| systematic_sample(black_box(p), m, &mut rng).unwrap()),
        );
    }
    group.finish();
}

fn bench_cap(c: &mut Criterion) {
    let mut rng = seeding::stream(9);
    use rand::Rng;
    let weights: Vec<f64> = (0..1000).map(|_| rng.random::<f64>().powi(4)).collect();
    let probs = ProbabilityVector::normalized(&weights).unwrap();
    c.bench_function("cap_and_normalize_n1000_m50", |b| {
        b.iter(|| cap_and_normalize(black_box(&probs), 50).unwrap())
    });
}

fn bench_sequential_oracle(c: &mut Criterion) {
    let probs = feasible_probs(10, 3, 5);
    c.bench_function("sequential_wor_inclusion_n10_m3", |b| {
        b.iter(|| sequential_wor_inclusion(black_box(&probs), 3).unwrap())
    });
}

criterion_group!(
    benches,
    bench_systematic,
    bench_cap,
    bench_sequential_oracle
);
criterion_main!(benches);

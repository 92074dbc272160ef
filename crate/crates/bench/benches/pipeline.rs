use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use uqsup_bench::{dump, ranking};
use uqsup_core::{auroc, average_precision, calibrate_threshold, quantify, Quantifier, QuantifierSpec};

fn quantifiers(c: &mut Criterion) {
    let d = dump(2_000, 20, 10);
    let mut group = c.benchmark_group("quantify_2000x20x10");
    for q in [
        Quantifier::MeanSoftmax,
        Quantifier::VariationRatio,
        Quantifier::PredictiveEntropy,
        Quantifier::MutualInformation,
    ] {
        group.bench_function(q.code(), |b| b.iter(|| quantify(black_box(&d.tensor), QuantifierSpec::new(q)).unwrap()));
    }
    group.finish();
}

fn ranking_metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("ranking_metrics");
    for n in [1_000, 100_000] {
        let (u, m) = ranking(n);
        group.bench_with_input(BenchmarkId::new("avgpr", n), &n, |b, _| {
            b.iter(|| average_precision(black_box(&u), &m).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("auroc", n), &n, |b, _| b.iter(|| auroc(black_box(&u), &m).unwrap()));
    }
    group.finish();
}

fn calibration(c: &mut Criterion) {
    let (u, _) = ranking(100_000);
    c.bench_function("calibrate_100000", |b| {
        b.iter(|| calibrate_threshold(black_box(&u), 0.05, Quantifier::VariationRatio).unwrap())
    });
}

criterion_group!(benches, quantifiers, ranking_metrics, calibration);
criterion_main!(benches);

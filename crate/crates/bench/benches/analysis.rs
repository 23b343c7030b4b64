use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use memc_bench::scenario;
use memc_core::baseline::{local_tests, per_sequence_mle, permutation_global_test};
use memc_core::inference::{summarize, test_report};
use memc_core::simulate::{stationary_distribution, ScenarioId};
use memc_core::{run_chain, McmcSettings};

fn posterior_summaries(c: &mut Criterion) {
    let (ds, spec, hyper) = scenario(ScenarioId::F, 1);
    let settings = McmcSettings {
        iterations: 200,
        burn_in: 100,
        thin: 1,
        seed: 1,
        parallel: false,
    };
    let trace = run_chain(&ds, &spec, &hyper, &settings).unwrap();
    let mut group = c.benchmark_group("posterior");
    group.sample_size(20);
    group.bench_function("summarize_100_draws", |b| b.iter(|| black_box(summarize(&trace, &ds).unwrap())));
    group.bench_function("test_report_100_draws", |b| {
        b.iter(|| black_box(test_report(&trace, ds.factors(), 0.02).unwrap()))
    });
    let p = trace.draws[0].lambda_fixed[0].clone();
    group.bench_function("stationary_5", |b| b.iter(|| black_box(stationary_distribution(&p).unwrap())));
    group.finish();
}

fn comparator(c: &mut Criterion) {
    let (ds, ..) = scenario(ScenarioId::F, 1);
    let est = per_sequence_mle(&ds);
    let mut group = c.benchmark_group("baseline");
    group.sample_size(10);
    group.bench_function("per_sequence_mle", |b| b.iter(|| black_box(per_sequence_mle(&ds))));
    group.bench_function("local_tests_genotype", |b| b.iter(|| black_box(local_tests(&est, 0).unwrap())));
    group.bench_function("permutation_99", |b| {
        b.iter(|| black_box(permutation_global_test(&est, 0, 99, 1).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, posterior_summaries, comparator);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use metadistill::axioms::check_axioms;
use metadistill::io::appendix_a_anchored;
use metadistill::sampling::{dirichlet_uniform, rng_from_seed};
use metadistill::{
    build_meta_teacher, divergence, run, DivergenceKind, GenerationWeightScheme, OperatorConfig,
    OperatorKind, Scenario,
};

fn divergences(c: &mut Criterion) {
    let mut group = c.benchmark_group("divergence");
    for v in [10usize, 100, 1000] {
        let mut rng = rng_from_seed(v as u64);
        let p = dirichlet_uniform(&mut rng, v);
        let q = dirichlet_uniform(&mut rng, v);
        for kind in DivergenceKind::ALL {
            group.bench_with_input(BenchmarkId::new(kind.to_string(), v), &v, |b, _| {
                b.iter(|| divergence(kind, black_box(&p), black_box(&q)).unwrap())
            });
        }
    }
    group.finish();
}

fn meta_teacher(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_meta_teacher");
    let mut rng = rng_from_seed(1);
    let teachers = vec![dirichlet_uniform(&mut rng, 100)];
    let students: Vec<_> = (0..8).map(|_| dirichlet_uniform(&mut rng, 100)).collect();
    for kind in OperatorKind::ALL {
        let op = OperatorConfig::new(kind, 0.3)
            .with_scheme(GenerationWeightScheme::ExponentialDecay { rate: 0.5 });
        group.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| {
                build_meta_teacher(&op, 0.3, black_box(&teachers), black_box(&students)).unwrap()
            })
        });
    }
    group.finish();
}

fn runs(c: &mut Criterion) {
    let anchored = appendix_a_anchored();
    c.bench_function("run/three_token_10_generations", |b| {
        b.iter(|| run(black_box(&anchored)).unwrap())
    });
    let mut rng = rng_from_seed(2);
    let big = Scenario::simple(
        dirichlet_uniform(&mut rng, 1000),
        dirichlet_uniform(&mut rng, 1000),
        0.3,
        50,
    );
    c.bench_function("run/v1000_50_generations", |b| {
        b.iter(|| run(black_box(&big)).unwrap())
    });
}

fn axioms(c: &mut Criterion) {
    let op = OperatorConfig::convex_mixture(0.3);
    c.bench_function("check_axioms/convex_100_trials", |b| {
        b.iter(|| check_axioms(black_box(&op), 100, 0))
    });
}

criterion_group!(benches, divergences, meta_teacher, runs, axioms);
criterion_main!(benches);

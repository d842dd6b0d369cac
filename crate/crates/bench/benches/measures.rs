use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use semcx_bench::{corpus, embedding};
use semcx_core::geometric::agglomerative_cluster_distances;
use semcx_core::{
    distance_matrix, filter_step, fit_lda, lexical_measures, minimum_spanning_tree,
    unique_examples, FiltrationConfig, LdaParams, Scope,
};

fn lexical(c: &mut Criterion) {
    let d = corpus(5_000);
    let mut group = c.benchmark_group("lexical");
    for scope in [Scope::UniqueTranscripts, Scope::AllExamples] {
        group.bench_with_input(
            BenchmarkId::from_parameter(scope.as_str()),
            &scope,
            |b, &s| b.iter(|| lexical_measures(&d, s).unwrap()),
        );
    }
    group.finish();
}

fn filtration(c: &mut Criterion) {
    let d = corpus(5_000);
    let cfg = FiltrationConfig::default();
    c.bench_function("filter_step", |b| b.iter(|| filter_step(&d, &cfg).unwrap()));
}

fn geometry(c: &mut Criterion) {
    let mut group = c.benchmark_group("geometry");
    group.sample_size(10);
    for n in [250, 1_000] {
        let e = embedding(n, 64);
        let m = distance_matrix(&e).unwrap();
        group.bench_with_input(BenchmarkId::new("distance_matrix", n), &e, |b, e| {
            b.iter(|| distance_matrix(e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mst", n), &m, |b, m| {
            b.iter(|| minimum_spanning_tree(m).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("complete_linkage", n), &m, |b, m| {
            b.iter(|| agglomerative_cluster_distances(m, 10).unwrap())
        });
    }
    group.finish();
}

fn lda(c: &mut Criterion) {
    let d = unique_examples(&corpus(500));
    let params = LdaParams {
        iterations: 50,
        ..LdaParams::defaults_for(&d, 0)
    };
    let mut group = c.benchmark_group("lda");
    group.sample_size(10);
    group.bench_function("fit_500_docs_50_iters", |b| {
        b.iter(|| fit_lda(&d, params).unwrap())
    });
    group.finish();
}

criterion_group!(benches, lexical, filtration, geometry, lda);
criterion_main!(benches);

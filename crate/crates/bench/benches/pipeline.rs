use criterion::{criterion_group, criterion_main, Criterion};
use fiberatlas::spectral::embed_all;
use fiberatlas::synth::{desk_bundles, generate_cohort, CohortSpec};
use fiberatlas::{cluster, fit_nystrom, group_objective, mcp, AffineTransform, FiberDistanceParams, KMeansConfig, NystromConfig, ResampledFiber};
use std::hint::black_box;

fn fibers(per_bundle: usize, subjects: usize) -> Vec<Vec<ResampledFiber>> {
    let spec = CohortSpec {
        bundles: desk_bundles(per_bundle),
        subjects,
        seed: 1,
        ..CohortSpec::default()
    };
    generate_cohort(&spec).unwrap().iter().map(|s| s.tractogram.resampled(15).unwrap()).collect()
}

fn metric(c: &mut Criterion) {
    let f = &fibers(10, 2)[0];
    let p = FiberDistanceParams::default();
    c.bench_function("mcp_pair", |b| b.iter(|| mcp(black_box(&f[0]), black_box(&f[41]), &p).unwrap()));
}

fn spectral(c: &mut Criterion) {
    let f = fibers(50, 2).remove(0);
    let cfg = NystromConfig {
        sample_size: 200,
        dims: 10,
        ..NystromConfig::default()
    };
    c.bench_function("nystrom_fit_m200", |b| b.iter(|| fit_nystrom(black_box(&f), &cfg).unwrap()));
    let model = fit_nystrom(&f, &cfg).unwrap();
    c.bench_function("nystrom_embed_400", |b| b.iter(|| embed_all(black_box(&f), &model).unwrap()));
    let e = embed_all(&f, &model).unwrap();
    let k = KMeansConfig {
        k: 16,
        ..KMeansConfig::default()
    };
    c.bench_function("kmeans_400x10_k16", |b| b.iter(|| cluster(black_box(&e), &k).unwrap()));
}

fn registration(c: &mut Criterion) {
    let samples: Vec<Vec<ResampledFiber>> = fibers(10, 4).into_iter().map(|s| s.into_iter().step_by(2).collect()).collect();
    let ids = vec![AffineTransform::identity(); samples.len()];
    c.bench_function("group_objective_4x40", |b| b.iter(|| group_objective(black_box(&samples), &ids, 10.0).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = metric, spectral, registration
}
criterion_main!(benches);

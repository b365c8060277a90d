use criterion::{criterion_group, criterion_main, Criterion};
use speiser_bench::zsq_exp_base;
use speiser_core::measure::{attractor_disks, estimate_area_with};
use speiser_core::orbit::{iterate, IterateOptions};
use speiser_core::wiman_valiron::wv_asymptotic_check;
use speiser_core::{classify, scan, ClassifyOptions, Family, FamilySpec, Rect, ScanMeta, C64};
use std::hint::black_box;

fn orbit(c: &mut Criterion) {
    let (f, l) = zsq_exp_base();
    let v = f.singular_values(l)[1].value;
    let opts = IterateOptions {
        budget: 2000,
        ..IterateOptions::default()
    };
    c.bench_function("iterate 2000 steps near the fixed critical value", |b| {
        b.iter(|| iterate(&f, l, black_box(v + 1e-9), &opts))
    });
    c.bench_function("classify lambda0", |b| {
        b.iter(|| classify(&f, black_box(l), &ClassifyOptions::default()))
    });
}

fn tile(c: &mut Criterion) {
    let (f, l) = zsq_exp_base();
    let meta = ScanMeta::new(
        f,
        l,
        Rect::centered(l, 1e-3),
        32,
        32,
        ClassifyOptions::default(),
    );
    let mut g = c.benchmark_group("scan");
    g.sample_size(10);
    g.bench_function("one 32x32 tile, one worker", |b| {
        b.iter(|| scan(black_box(&meta), 1).unwrap())
    });
    g.finish();
}

fn area(c: &mut Criterion) {
    let f = FamilySpec::ze_shift();
    let a = C64::new(1.0, 0.0);
    let disks = attractor_disks(&f, a, &ClassifyOptions::default());
    let r = Rect::new(-3.0, 3.0, -3.0, 3.0);
    let mut g = c.benchmark_group("area");
    g.sample_size(10);
    g.bench_function("ze_shift 10^4 samples, budget 1000", |b| {
        b.iter(|| estimate_area_with(&f, a, &r, 10_000, 1000, black_box(7), &disks).unwrap())
    });
    g.finish();
}

fn tract(c: &mut Criterion) {
    let f = FamilySpec::exp_lambda();
    let a = C64::new(1.0, 0.0);
    let t = f.tract_over_infinity(a);
    c.bench_function("wv_asymptotic_check exp r=50", |b| {
        b.iter(|| wv_asymptotic_check(&f, a, &t, black_box(50.0), 0.75, 97).unwrap())
    });
}

criterion_group!(benches, orbit, tile, area, tract);
criterion_main!(benches);

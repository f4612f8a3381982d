use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sliceforest::ilp_solver::{lp_relax, solve_ilp};
use sliceforest::segmentation::{
    min_cut_segment, parametric_sweep, parametric_sweep_cold, SliceData,
};
use sliceforest_bench::{program, slice_fixture};

fn segmentation(c: &mut Criterion) {
    let mut group = c.benchmark_group("segmentation");
    for size in [64, 128] {
        let f = slice_fixture(size, 34);
        let slice = SliceData::new(f.dims, &f.intensity, &f.prob).unwrap();
        group.bench_with_input(BenchmarkId::new("min_cut", size), &size, |b, _| {
            b.iter(|| min_cut_segment(black_box(slice), &f.params, 0.5))
        });
        group.bench_with_input(BenchmarkId::new("sweep_warm", size), &size, |b, _| {
            b.iter(|| parametric_sweep(black_box(slice), &f.params).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sweep_cold", size), &size, |b, _| {
            b.iter(|| parametric_sweep_cold(black_box(slice), &f.params).unwrap())
        });
    }
    group.finish();
}

fn ilp(c: &mut Criterion) {
    let mut group = c.benchmark_group("ilp");
    group.sample_size(20);
    for depth in [5, 10, 20] {
        let p = program(depth);
        group.bench_with_input(BenchmarkId::new("solve", depth), &p, |b, p| {
            b.iter(|| solve_ilp(black_box(p)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("lp_relax", depth), &p, |b, p| {
            b.iter(|| lp_relax(black_box(p)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, segmentation, ilp);
criterion_main!(benches);

//! Criterion micro-benchmarks for the numeric kernels that dominate
//! training time: sparse matrix products, Chebyshev basis construction,
//! full convolution forward passes, and the Jacobi eigensolver.

use std::hint::black_box;
use std::rc::Rc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use chebgraph::{
    project, project_2d, random_graph, symmetric_eigen, ChebBasis, ConvLayer, DenseMat,
    FusionMethod, LapRef, Segments, SparseSym, Tape,
};

const K_ORDER: usize = 4;
const X_IN: usize = 7;
const OUT: usize = 32;

/// A rescaled Laplacian of a random graph with `2n` edges, plus a matching
/// feature matrix and single-graph segment map.
fn fixture(n: usize, seed: u64) -> (Rc<SparseSym>, DenseMat, Rc<Segments>) {
    let rec = random_graph(n, X_IN, seed);
    let lap = Rc::new(rec.adjacency.rescaled_laplacian().unwrap());
    let segments = Rc::new(Segments::from_sizes(&[n]).unwrap());
    (lap, rec.node_features, segments)
}

fn bench_spmm(c: &mut Criterion) {
    let mut group = c.benchmark_group("spmm");
    for &n in &[1_000usize, 4_000] {
        let (lap, _, _) = fixture(n, 11);
        let x = DenseMat::filled(n, OUT, 0.5);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| lap.spmm(black_box(&x)).unwrap());
        });
    }
    group.finish();
}

fn bench_cheb_project(c: &mut Criterion) {
    let mut group = c.benchmark_group("cheb_project");
    for &n in &[1_000usize, 4_000] {
        let (lap, x, _) = fixture(n, 12);
        group.bench_with_input(BenchmarkId::new("1d", n), &n, |b, _| {
            b.iter(|| project(black_box(&lap), black_box(&x), K_ORDER).unwrap());
        });
        let (lap_b, _, _) = fixture(n, 13);
        group.bench_with_input(BenchmarkId::new("2d", n), &n, |b, _| {
            b.iter(|| {
                project_2d(black_box(&lap), black_box(&lap_b), black_box(&x), K_ORDER).unwrap()
            });
        });
    }
    group.finish();
}

fn bench_basis_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("basis_matmul");
    for &n in &[1_000usize, 4_000] {
        let (lap, x, _) = fixture(n, 14);
        let basis: ChebBasis = project(&lap, &x, K_ORDER).unwrap();
        let stacked = basis.concat();
        let theta = DenseMat::filled(stacked.cols, OUT, 0.01);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(&stacked).matmul(black_box(&theta)).unwrap());
        });
    }
    group.finish();
}

fn bench_conv_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv_forward");
    let n = 2_000usize;
    let (lap_a, x, segments) = fixture(n, 15);
    let (lap_b, _, _) = fixture(n, 16);
    let cases = [
        (FusionMethod::Single, 1usize),
        (FusionMethod::Concat, 2),
        (FusionMethod::TwoDCheb, 2),
        (FusionMethod::Multiply, 2),
    ];
    for (fusion, relations) in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let layer =
            ConvLayer::new("conv0", fusion, K_ORDER, X_IN, OUT, relations, 128, &mut rng).unwrap();
        group.bench_function(BenchmarkId::from_parameter(fusion), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let xv = tape.constant(x.clone());
                let laps = [LapRef::Fixed(&lap_a), LapRef::Fixed(&lap_b)];
                layer
                    .forward(&tape, &laps[..relations], &xv, &segments)
                    .unwrap()
                    .value()
            });
        });
    }
    group.finish();
}

fn bench_jacobi_eigen(c: &mut Criterion) {
    let rec = random_graph(64, X_IN, 18);
    let dense = rec.adjacency.rescaled_laplacian().unwrap().to_dense();
    c.bench_function("jacobi_eigen_64", |b| {
        b.iter(|| symmetric_eigen(black_box(&dense)).unwrap());
    });
}

criterion_group!(
    kernels,
    bench_spmm,
    bench_cheb_project,
    bench_basis_matmul,
    bench_conv_forward,
    bench_jacobi_eigen
);
criterion_main!(kernels);

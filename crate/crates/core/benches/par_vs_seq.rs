//! Compares the rayon-backed column map against the sequential fallback on
//! a snapshot-generation-shaped workload: many independent matrix-vector
//! recurrences of moderate depth.

use bpod::linops::Matrix;
use bpod::par;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn march(a: &Matrix, col: usize, steps: usize) -> f64 {
    let n = a.nrows();
    let mut x = nalgebra::DVector::<f64>::zeros(n);
    x[col % n] = 1.0;
    for _ in 0..steps {
        x = a * &x;
        let nrm = x.norm();
        if nrm > 0.0 {
            x /= nrm;
        }
    }
    x.norm()
}

fn bench_column_map(c: &mut Criterion) {
    let n = 96;
    let a = Matrix::from_fn(n, n, |i, j| {
        let d = if i == j { -1.0 } else { 0.0 };
        d + 0.3 * ((i * 31 + j * 17) % 13) as f64 / 13.0
    });
    let mut group = c.benchmark_group("column_map");
    for &cols in &[16usize, 64] {
        group.bench_with_input(BenchmarkId::new("parallel", cols), &cols, |b, &cols| {
            b.iter(|| {
                let out = par::map_collect((0..cols).collect(), |j| march(&a, j, 200));
                std::hint::black_box(out)
            })
        });
        group.bench_with_input(BenchmarkId::new("sequential", cols), &cols, |b, &cols| {
            b.iter(|| {
                let out = par::map_collect_seq((0..cols).collect(), |j| march(&a, j, 200));
                std::hint::black_box(out)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_column_map);
criterion_main!(benches);

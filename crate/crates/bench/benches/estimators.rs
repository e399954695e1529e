use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use zobilevel::hessinv::{approx_hess_inv_vec, HessInvConfig};
use zobilevel::problems::{make_quadratic, QuadraticFamily};
use zobilevel::smoothing::{zo_grad_x, zo_hess_xy, zo_hess_yy_apply};
use zobilevel::{RngStream, SmoothingParams};

fn estimators(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimators");
    for n in [8usize, 32] {
        let spec = QuadraticFamily::new(n, n, 0).with_noise(0.01).generate().unwrap();
        let (p, _) = make_quadratic(&spec).unwrap();
        let (f, g) = p.oracles();
        let x = DVector::from_element(n, 0.3);
        let y = DVector::from_element(n, -0.2);
        let z = DVector::from_element(n, 0.1);
        let s = RngStream::new(1);
        group.bench_with_input(BenchmarkId::new("grad_x_batch64", n), &n, |b, _| {
            b.iter(|| zo_grad_x(&f, black_box(&x), &y, 1e-3, 0.0, 64, &s).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("hess_xy_batch64", n), &n, |b, _| {
            b.iter(|| zo_hess_xy(&g, black_box(&x), &y, 1e-3, 1e-3, 64, &s).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("hess_yy_apply", n), &n, |b, _| {
            b.iter(|| zo_hess_yy_apply(&g, black_box(&x), &y, 1e-3, 1e-3, &z, &s).unwrap())
        });
        let cfg = HessInvConfig {
            beta: 1e-3,
            iterations: 100,
            smoothing: SmoothingParams::uniform(1e-3),
            z0: None,
        };
        group.bench_with_input(BenchmarkId::new("hessinv_100_steps", n), &n, |b, _| {
            b.iter(|| approx_hess_inv_vec(&f, &g, black_box(&x), &y, &cfg, &s).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, estimators);
criterion_main!(benches);

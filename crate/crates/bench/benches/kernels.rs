use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meanfield::dataset::gen_nonlinear;
use meanfield::hessian::{eigenvalues_symmetric, hessian_fd};
use meanfield::{ActivationKind, Matrix, Network};

fn forward_backward(c: &mut Criterion) {
    let ds = gen_nonlinear(863, 0, 0.05).unwrap();
    let mut group = c.benchmark_group("loss_and_gradient");
    for kind in [
        ActivationKind::Swish,
        ActivationKind::ReLU,
        ActivationKind::Sigmoid,
    ] {
        let net = Network::init(&[2, 8, 2, 1], kind, 0, 1.0).unwrap();
        group.bench_function(BenchmarkId::new("moons_8_2", kind.name()), |b| {
            b.iter(|| {
                net.loss_and_gradient(black_box(&ds.x), black_box(&ds.y))
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn hessian(c: &mut Criterion) {
    let ds = gen_nonlinear(863, 0, 0.05).unwrap();
    let net = Network::init(&[2, 8, 2, 1], ActivationKind::Swish, 0, 1.0).unwrap();
    let theta = net.flatten_params();
    c.bench_function("hessian_fd/moons_8_2", |b| {
        b.iter(|| {
            hessian_fd(
                |t| Ok(net.unflatten_params(t)?.loss_and_gradient(&ds.x, &ds.y)?.1),
                black_box(&theta),
            )
            .unwrap()
        })
    });
}

fn symmetric(n: usize) -> Matrix {
    // deterministic, well spread spectrum
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = ((i * 31 + j * 17) % 23) as f64 / 23.0 - 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

fn jacobi(c: &mut Criterion) {
    let mut group = c.benchmark_group("eigenvalues_symmetric");
    group.sample_size(10);
    for n in [16, 64, 256] {
        let a = symmetric(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| {
            b.iter(|| eigenvalues_symmetric(black_box(a)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward, hessian, jacobi);
criterion_main!(benches);

//! Library results checked against small independent re-implementations.

#![allow(clippy::needless_range_loop)]

use meanfield::hessian::{eigen_symmetric, eigenvalues_symmetric, hessian_fd, spectral_indices};
use meanfield::verify::random_symmetric;
use meanfield::{dataset, ActivationKind, Matrix, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn hidden(kind: ActivationKind, h: f64, beta: f64) -> f64 {
    match kind {
        ActivationKind::Swish => h / (1.0 + (-beta * h).exp()),
        ActivationKind::Sigmoid => logistic(beta * h),
        ActivationKind::Tanh => (beta * h).tanh(),
        ActivationKind::ReLU => {
            if h > 0.0 {
                h
            } else {
                0.0
            }
        }
        ActivationKind::Linear => h,
    }
}

/// Forward pass written with plain loops over the public parameters.
fn forward_oracle(net: &Network, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    for l in 0..net.n_layers() {
        let w = net.weights(l);
        let b = net.biases(l);
        let beta = net.betas()[l].get();
        let last = l + 1 == net.n_layers();
        a = (0..w.rows())
            .map(|i| {
                let h: f64 = w.row(i).iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>() + b[i];
                if last {
                    logistic(beta * h)
                } else {
                    hidden(net.hidden_kind(), h, beta)
                }
            })
            .collect();
    }
    a[0]
}

#[test]
fn forward_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in ActivationKind::ALL {
        for sizes in [&[2usize, 3, 1][..], &[4, 8, 2, 1], &[3, 5, 4, 1]] {
            let net = Network::init(sizes, kind, rng.random(), rng.random_range(0.5..2.0)).unwrap();
            let batch = 7;
            let data: Vec<f64> = (0..batch * sizes[0])
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let x = Matrix::from_vec(batch, sizes[0], data).unwrap();
            let out = net.forward(&x).unwrap().outputs;
            for r in 0..batch {
                let expected = forward_oracle(&net, x.row(r));
                assert!((out[r] - expected).abs() <= 1e-12, "{kind:?} {sizes:?}");
            }
        }
    }
}

#[test]
fn linear_layers_compose_into_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let deep = Network::init(&[2, 3, 1], ActivationKind::Linear, rng.random(), 1.0).unwrap();
        let flat: Vec<f64> = deep
            .flatten_params()
            .iter()
            .map(|v| v + rng.random_range(-0.5..0.5))
            .collect();
        let deep = deep.unflatten_params(&flat).unwrap();
        let (a, b1) = (deep.weights(0), deep.biases(0));
        let (b, b2) = (deep.weights(1), deep.biases(1));
        let ba = b.matmul(a).unwrap();
        let bias = b2[0] + b.row(0).iter().zip(b1).map(|(p, q)| p * q).sum::<f64>();
        let beta_out = deep.betas()[1].get();
        let shallow = Network::from_parts(
            &[2, 1],
            vec![ba],
            vec![vec![bias]],
            vec![beta_out],
            ActivationKind::Linear,
            true,
        )
        .unwrap();
        let x = Matrix::from_rows(&[[0.3, -1.2], [2.0, 0.5], [-0.7, -0.1]]).unwrap();
        let y1 = deep.forward(&x).unwrap().outputs;
        let y2 = shallow.forward(&x).unwrap().outputs;
        for (p, q) in y1.iter().zip(&y2) {
            assert!((p - q).abs() <= 1e-12);
        }
    }
}

#[test]
fn logistic_neuron_hessian_matches_closed_form() {
    let x = Matrix::from_rows(&[[0.5, -1.0], [1.5, 0.25], [-0.3, 0.8], [0.0, -2.0]]).unwrap();
    let y = vec![1.0, 0.0, 1.0, 0.0];
    let beta = 1.7;
    let net = Network::from_parts(
        &[2, 1],
        vec![Matrix::from_vec(1, 2, vec![0.4, -0.6]).unwrap()],
        vec![vec![0.2]],
        vec![beta],
        ActivationKind::Sigmoid,
        false,
    )
    .unwrap();
    assert_eq!(net.param_count(), 3);
    let theta = net.flatten_params();
    let est = hessian_fd(
        |t| Ok(net.unflatten_params(t)?.loss_and_gradient(&x, &y)?.1),
        &theta,
    )
    .unwrap();

    let m = y.len() as f64;
    let mut oracle = [[0.0; 3]; 3];
    for r in 0..x.rows() {
        let z = [x.row(r)[0], x.row(r)[1], 1.0];
        let h = theta[0] * z[0] + theta[1] * z[1] + theta[2];
        let q = logistic(beta * h);
        for i in 0..3 {
            for j in 0..3 {
                oracle[i][j] += q * (1.0 - q) * beta * beta * z[i] * z[j] / m;
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let got = est.matrix.row(i)[j];
            let want = oracle[i][j];
            assert!(
                (got - want).abs() <= 1e-5 * want.abs().max(1e-3),
                "({i},{j}) {got} vs {want}"
            );
        }
    }
    assert!(est.asymmetry_ok());
    assert_eq!(est.matrix.max_asymmetry(), 0.0);
}

fn det_by_elimination(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|r| m.row(r).to_vec()).collect();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

#[test]
fn eigenvalue_product_matches_determinant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let h = random_symmetric(&mut rng, 5);
        let eigs = eigenvalues_symmetric(&h).unwrap();
        let product: f64 = eigs.iter().product();
        let det = det_by_elimination(&h);
        assert!(
            (product - det).abs() <= 1e-8 * det.abs().max(1e-12),
            "{product} vs {det}"
        );
        let sum: f64 = eigs.iter().sum();
        assert!((sum - h.trace()).abs() <= 1e-10 * h.trace().abs().max(1.0));
    }
}

#[test]
fn spectrum_is_invariant_under_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 9;
    let h = random_symmetric(&mut rng, n);
    let perm: Vec<usize> = {
        use rand::seq::SliceRandom;
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng);
        p
    };
    let mut permuted = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            permuted.row_mut(i)[j] = h.row(perm[i])[perm[j]];
        }
    }
    let a = eigenvalues_symmetric(&h).unwrap();
    let b = eigenvalues_symmetric(&permuted).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() <= 1e-11 * (1.0 + p.abs()));
    }
}

#[test]
fn eigenvectors_are_orthonormal_and_reconstruct() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [1, 2, 6, 10, 40] {
        let h = random_symmetric(&mut rng, n);
        let eig = eigen_symmetric(&h).unwrap();
        let back = eig.reconstruct();
        let v = &eig.vectors;
        for i in 0..n {
            for j in 0..n {
                assert!((back.row(i)[j] - h.row(i)[j]).abs() <= 1e-8);
                let dot: f64 = (0..n).map(|r| v[(r, i)] * v[(r, j)]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn quadratic_hessian_is_constant() {
    let a = Matrix::from_rows(&[[4.0, 1.0, -0.5], [1.0, 3.0, 0.25], [-0.5, 0.25, 2.0]]).unwrap();
    let grad = |t: &[f64]| -> meanfield::Result<Vec<f64>> {
        Ok((0..3)
            .map(|i| a.row(i).iter().zip(t).map(|(p, q)| p * q).sum())
            .collect())
    };
    for theta in [[0.0, 0.0, 0.0], [5.0, -3.0, 100.0], [-1e3, 2.0, 0.5]] {
        let est = hessian_fd(grad, &theta).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((est.matrix.row(i)[j] - a.row(i)[j]).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn convex_fit_has_no_descent_directions() {
    let ds = dataset::gen_nonlinear(200, 9, 0.1).unwrap();
    let mut net = Network::init(&[2, 1], ActivationKind::Sigmoid, 0, 1.0)
        .unwrap()
        .with_beta_trainable(false);
    let mut theta = net.flatten_params();
    for _ in 0..500 {
        let (_, g) = net.loss_and_gradient(&ds.x, &ds.y).unwrap();
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= 0.5 * gi;
        }
        net = net.unflatten_params(&theta).unwrap();
    }
    let est = hessian_fd(
        |t| Ok(net.unflatten_params(t)?.loss_and_gradient(&ds.x, &ds.y)?.1),
        &theta,
    )
    .unwrap();
    let eigs = eigenvalues_symmetric(&est.matrix).unwrap();
    let idx = spectral_indices(&eigs, 1e-6).unwrap();
    assert!(idx.alpha <= 0.05);
    assert!(eigs[0] > 0.0);
}

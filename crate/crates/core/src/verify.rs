//! Numerical self-checks: every analytic formula in the crate against an
//! independent route (finite differences, literal products, root finding,
//! trace and reconstruction identities).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::activation::{self, grid, limit_check, log_partition, ActivationKind, NoiseParam};
use crate::error::Result;
use crate::hessian::{eigen_symmetric, hessian_fd};
use crate::linalg::Matrix;
use crate::loss;
use crate::network::Network;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed error (or gap) over the check.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, worst: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: worst <= tolerance,
            worst,
            tolerance,
            detail,
        }
    }
}

/// `|a - b| / max(|a|, |b|, floor)`
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Relative error of `exact` against the central difference of `up`/`down`,
/// after discounting the difference's own rounding `4 eps max(|up|, |down|) / 2s`.
///
/// Saturated units (σ(βh) within 1e-12 of 1) have derivatives far below the
/// resolution of differencing values near 1; without the discount they
/// would count as total mismatches.
pub fn excess_error(exact: f64, up: f64, down: f64, step: f64) -> f64 {
    let fd = (up - down) / (2.0 * step);
    let noise = 4.0 * f64::EPSILON * up.abs().max(down.abs()) / (2.0 * step);
    ((exact - fd).abs() - noise).max(0.0) / exact.abs().max(fd.abs()).max(1e-300)
}

/// The identities `σ(βh) = β⁻¹ ∂_b ln Z` and `h σ(βh) = ∂_β ln Z`, plus the
/// h- and β-derivatives of every activation, on a 100 × 10 grid.
pub fn check_mean_field_identities() -> Result<Vec<CheckOutcome>> {
    let hs: Vec<f64> = (0..100).map(|i| -5.0 + 10.0 * i as f64 / 99.0).collect();
    let betas: Vec<f64> = (0..10)
        .map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / 9.0))
        .collect();
    let (mut gate_err, mut swish_err, mut dh_err, mut dbeta_err) =
        (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for &b in &betas {
        let beta = NoiseParam::new(b)?;
        for &h in &hs {
            let step = 1e-6 * h.abs().max(1.0);
            let fd_b = (log_partition(h + step, beta)? - log_partition(h - step, beta)?)
                / (2.0 * step)
                / b;
            gate_err = gate_err.max(relative_error(
                activation::expected_gate(h, beta)?,
                fd_b,
                1e-300,
            ));

            let bstep = 1e-6 * b;
            let up = NoiseParam::new(b + bstep)?;
            let down = NoiseParam::new(b - bstep)?;
            let fd_beta = (log_partition(h, up)? - log_partition(h, down)?) / (2.0 * bstep);
            swish_err = swish_err.max(relative_error(
                activation::activate(ActivationKind::Swish, h, beta)?,
                fd_beta,
                1e-300,
            ));

            for kind in ActivationKind::ALL {
                if kind == ActivationKind::ReLU && h.abs() <= step {
                    continue;
                }
                let (up, down) = (kind.value(h + step, b), kind.value(h - step, b));
                dh_err = dh_err.max(excess_error(
                    activation::activate_dh(kind, h, beta)?,
                    up,
                    down,
                    step,
                ));
                let (up, down) = (kind.value(h, b + bstep), kind.value(h, b - bstep));
                dbeta_err = dbeta_err.max(excess_error(
                    activation::activate_dbeta(kind, h, beta)?,
                    up,
                    down,
                    bstep,
                ));
            }
        }
    }
    let detail = "100 h in [-5, 5] x 10 beta in [0.1, 10]".to_string();
    Ok(vec![
        CheckOutcome::new(
            "expected gate = d lnZ / d b / beta",
            gate_err,
            1e-6,
            detail.clone(),
        ),
        CheckOutcome::new("swish = d lnZ / d beta", swish_err, 1e-6, detail.clone()),
        CheckOutcome::new(
            "activate_dh vs finite differences",
            dh_err,
            1e-6,
            detail.clone(),
        ),
        CheckOutcome::new(
            "activate_dbeta vs finite differences",
            dbeta_err,
            1e-6,
            detail,
        ),
    ])
}

/// Swish approaches ReLU within `1/(eβ)` and `h/2` within `β max h² / 4`.
pub fn check_limits() -> Result<Vec<CheckOutcome>> {
    let g = grid(-10.0, 10.0, 0.001);
    let mut out = Vec::new();
    for b in [10.0, 100.0, 1000.0] {
        let r = limit_check(&g, NoiseParam::new(b)?)?;
        out.push(CheckOutcome::new(
            &format!("relu limit beta={b}"),
            r.relu_gap - r.relu_bound(),
            1e-9,
            format!("gap {:.6e} vs bound {:.6e}", r.relu_gap, r.relu_bound()),
        ));
    }
    let g = grid(-1.0, 1.0, 0.01);
    let r = limit_check(&g, NoiseParam::new(1e-6)?)?;
    out.push(CheckOutcome::new(
        "linear limit beta=1e-6",
        r.linear_gap,
        // β h²/4 plus rounding in σ(βh) - 1/2
        2.5e-7 + 1e-15,
        format!("gap {:.3e}", r.linear_gap),
    ));
    Ok(out)
}

/// A random network instance for gradient checks.
pub struct GradientInstance {
    pub net: Network,
    pub x: Matrix,
    pub y: Vec<f64>,
}

/// Draws a random `(net, X, Y)` with perturbed biases and βs; for ReLU,
/// instances with a hidden pre-activation within `0.05` of the kink are redrawn.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    sizes: &[usize],
    kind: ActivationKind,
    batch: usize,
) -> Result<GradientInstance> {
    loop {
        let net = Network::init(sizes, kind, rng.random(), 1.0)?;
        let mut flat = net.flatten_params();
        for v in flat.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += 0.3 * z;
        }
        for i in net.beta_indices() {
            flat[i] = rng.random_range(0.5..2.0);
        }
        let mut net = net.unflatten_params(&flat)?;
        for l in 0..net.n_layers() {
            if !net.beta_is_parameter(l) {
                net.set_beta(l, NoiseParam::new(rng.random_range(0.5..2.0))?);
            }
        }
        let data = (0..batch * sizes[0])
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let x = Matrix::from_vec(batch, sizes[0], data)?;
        let y = (0..batch)
            .map(|_| f64::from(u8::from(rng.random_bool(0.5))))
            .collect();
        if kind == ActivationKind::ReLU {
            let cache = net.forward(&x)?;
            let near_kink = cache.preacts[..net.n_layers() - 1]
                .iter()
                .any(|h| h.as_slice().iter().any(|v| v.abs() < 0.05));
            if near_kink {
                continue;
            }
        }
        return Ok(GradientInstance { net, x, y });
    }
}

/// Step for gradient checks, relative to `max(1, |θ_i|)`.
pub const GRADIENT_FD_STEP: f64 = 4e-3;

/// Richardson-extrapolated central difference, `(4 D(h/2) - D(h)) / 3`.
///
/// Truncation is `O(h⁴)`, so the step can stay large enough that rounding
/// in the loss (about `eps · L / h`) stays near `1e-13`.
pub fn richardson_derivative<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    x: f64,
    h: f64,
) -> Result<f64> {
    let mut central = |s: f64| -> Result<f64> { Ok((f(x + s)? - f(x - s)?) / (2.0 * s)) };
    let coarse = central(h)?;
    let fine = central(h / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Worst relative error between the analytic gradient and
/// [`richardson_derivative`] of the loss in every coordinate.
pub fn gradient_fd_error(inst: &GradientInstance, floor: f64) -> Result<f64> {
    let (_, grad) = inst.net.loss_and_gradient(&inst.x, &inst.y)?;
    let theta = inst.net.flatten_params();
    let mut worst = 0.0_f64;
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let step = GRADIENT_FD_STEP * theta[i].abs().max(1.0);
        let fd = richardson_derivative(
            |t| {
                probe[i] = t;
                inst.net.unflatten_params(&probe)?.loss(&inst.x, &inst.y)
            },
            theta[i],
            step,
        )?;
        probe[i] = theta[i];
        worst = worst.max(relative_error(grad[i], fd, floor));
    }
    Ok(worst)
}

pub const GRADIENT_ARCHITECTURES: [&[usize]; 4] =
    [&[2, 3, 1], &[3, 5, 1], &[4, 8, 1], &[4, 8, 2, 1]];

/// Relative-error floor for gradient coordinates close to zero.
pub const GRADIENT_REL_FLOOR: f64 = 1e-7;

pub fn check_backprop(instances_per_kind: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for kind in ActivationKind::ALL {
        let mut worst = 0.0_f64;
        for k in 0..instances_per_kind {
            let sizes = GRADIENT_ARCHITECTURES[k % GRADIENT_ARCHITECTURES.len()];
            let inst = random_instance(&mut rng, sizes, kind, 8)?;
            worst = worst.max(gradient_fd_error(&inst, GRADIENT_REL_FLOOR)?);
        }
        out.push(CheckOutcome::new(
            &format!("backprop vs finite differences ({kind})"),
            worst,
            1e-5,
            format!("{instances_per_kind} random nets up to [4,8,2,1]"),
        ));
    }
    Ok(out)
}

/// Cross-entropy equals the literal Bernoulli likelihood, and the closed-form
/// saddle-point multiplier equals the root of the stationarity condition.
pub fn check_likelihood_identities(instances: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let m = rng.random_range(1..=64);
        let q: Vec<f64> = (0..m).map(|_| rng.random_range(0.001..0.999)).collect();
        let y: Vec<f64> = (0..m)
            .map(|_| f64::from(u8::from(rng.random_bool(0.5))))
            .collect();
        let diff = (loss::bce_loss(&q, &y)? - loss::bernoulli_nll_oracle(&q, &y)?).abs();
        worst = worst.max(diff);
    }
    let mut lambda_worst = 0.0_f64;
    for i in 1..=19 {
        for j in 1..=19 {
            let (y, q) = (0.05 * i as f64, 0.05 * j as f64);
            let diff =
                (loss::saddle_point_lambda(y, q)? - loss::saddle_point_lambda_bisect(y, q)?).abs();
            lambda_worst = lambda_worst.max(diff);
        }
    }
    Ok(vec![
        CheckOutcome::new(
            "cross-entropy = Bernoulli likelihood",
            worst,
            1e-12,
            format!("{instances} random batches"),
        ),
        CheckOutcome::new(
            "saddle-point multiplier closed form vs bisection",
            lambda_worst,
            1e-8,
            "19 x 19 grid over (0.05..0.95)^2".into(),
        ),
    ])
}

/// Random symmetric matrix with standard normal entries.
pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = StandardNormal.sample(rng);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

pub fn check_hessian_machinery(seed: u64) -> Result<Vec<CheckOutcome>> {
    let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 3.0]])?;
    let h = hessian_fd(
        |t| Ok(vec![2.0 * t[0] + t[1], t[0] + 3.0 * t[1]]),
        &[0.7, -1.3],
    )?;
    let quad = h
        .matrix
        .as_slice()
        .iter()
        .zip(a.as_slice())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut trace_worst, mut recon_worst) = (0.0_f64, 0.0_f64);
    for n in 1..=10 {
        for _ in 0..5 {
            let m = random_symmetric(&mut rng, n);
            let eig = eigen_symmetric(&m)?;
            let sum: f64 = eig.values.iter().sum();
            let scale = eig.values.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
            trace_worst = trace_worst.max((sum - m.trace()).abs() / scale);
            let rebuilt = eig.reconstruct();
            let diff: f64 = rebuilt
                .as_slice()
                .iter()
                .zip(m.as_slice())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            recon_worst = recon_worst.max(diff / m.frobenius_norm());
        }
    }
    Ok(vec![
        CheckOutcome::new(
            "quadratic-form Hessian",
            quad,
            1e-6,
            "A = [[2,1],[1,3]]".into(),
        ),
        CheckOutcome::new(
            "eigenvalue sum vs trace",
            trace_worst,
            1e-10,
            "random symmetric up to 10x10".into(),
        ),
        CheckOutcome::new(
            "Q diag(l) Q^T reconstruction",
            recon_worst,
            1e-8,
            "random symmetric up to 10x10".into(),
        ),
    ])
}

/// Every suite with the sizes used by the command-line `verify`.
pub fn run_all() -> Result<Vec<CheckOutcome>> {
    let mut out = check_mean_field_identities()?;
    out.extend(check_limits()?);
    out.extend(check_backprop(20, 7)?);
    out.extend(check_likelihood_identities(1000, 11)?);
    out.extend(check_hessian_machinery(13)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-9), 0.0);
        assert_eq!(relative_error(0.0, 1e-12, 1e-6), 1e-6);
        assert!((relative_error(2.0, 1.0, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn likelihood_suite_passes() {
        for c in check_likelihood_identities(50, 1).unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }
}

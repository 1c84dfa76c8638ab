//! End-to-end acceptance suite. Runs every criterion, prints one PASS/FAIL
//! line for each and exits non-zero if any fails.
//!
//! `cargo test -p meanfield --test acceptance` runs it on its own; criterion
//! numbers after `--` select a subset.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use meanfield::activation::{activate, expected_gate, log_partition};
use meanfield::experiment::{emit_outputs, train_run, RunResult};
use meanfield::hessian::{eigen_symmetric, hessian_fd};
use meanfield::loss::{
    bce_loss, bernoulli_nll_oracle, saddle_point_lambda, saddle_point_lambda_bisect,
};
use meanfield::verify::{random_instance, random_symmetric, GRADIENT_ARCHITECTURES};
use meanfield::{ActivationKind, Matrix, NoiseParam, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn beta(b: f64) -> NoiseParam {
    NoiseParam::new(b).unwrap()
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn mean_field_identities() -> Verdict {
    let mut worst = 0.0_f64;
    for i in 0..100 {
        let h = -5.0 + 10.0 * i as f64 / 99.0;
        for j in 0..10 {
            let b = 10f64.powf(-1.0 + 2.0 * j as f64 / 9.0);
            // ln Z depends on βh only, so steps scale with β
            let d_h = richardson(|hh| log_partition(hh, beta(b)).unwrap(), h, 1e-3 / b) / b;
            worst = worst.max(rel(expected_gate(h, beta(b)).unwrap(), d_h, 1e-300));
            let d_b = richardson(|bb| log_partition(h, beta(bb)).unwrap(), b, 1e-3 * b);
            worst = worst.max(rel(
                activate(ActivationKind::Swish, h, beta(b)).unwrap(),
                d_b,
                1e-300,
            ));
        }
    }
    Verdict::new(
        worst <= 1e-6,
        format!("worst relative error {worst:.2e} (tolerance 1e-6)"),
    )
}

fn relu_limit() -> Verdict {
    let mut all = true;
    let mut parts = Vec::new();
    for b in [10.0, 100.0, 1000.0] {
        let coarse = (0..=20_000).map(|i| -10.0 + 0.001 * i as f64);
        // resolves the dip at h ≈ -1.28/β
        let fine = (0..=20_000).map(|i| (-10.0 + 0.001 * i as f64) / b);
        let gap = coarse
            .chain(fine)
            .map(|h| (activate(ActivationKind::Swish, h, beta(b)).unwrap() - h.max(0.0)).abs())
            .fold(0.0_f64, f64::max);
        let bound = 1.0 / (std::f64::consts::E * b) + 1e-9;
        all &= gap <= bound;
        parts.push(format!("beta {b}: {gap:.3e} <= {bound:.3e}"));
    }
    Verdict::new(all, parts.join(", "))
}

fn richardson(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    let mut d = |s: f64| (f(x + s) - f(x - s)) / (2.0 * s);
    let (coarse, fine) = (d(h), d(h / 2.0));
    (4.0 * fine - coarse) / 3.0
}

fn backprop() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut parts = Vec::new();
    let mut all = true;
    for kind in ActivationKind::ALL {
        let mut worst = 0.0_f64;
        for k in 0..100 {
            let sizes = GRADIENT_ARCHITECTURES[k % GRADIENT_ARCHITECTURES.len()];
            let inst = random_instance(&mut rng, sizes, kind, 8).unwrap();
            let (_, grad) = inst.net.loss_and_gradient(&inst.x, &inst.y).unwrap();
            let theta = inst.net.flatten_params();
            let mut probe = theta.clone();
            for i in 0..theta.len() {
                let fd = richardson(
                    |t| {
                        probe[i] = t;
                        inst.net
                            .unflatten_params(&probe)
                            .unwrap()
                            .loss(&inst.x, &inst.y)
                            .unwrap()
                    },
                    theta[i],
                    4e-3 * theta[i].abs().max(1.0),
                );
                probe[i] = theta[i];
                worst = worst.max(rel(grad[i], fd, 1e-7));
            }
        }
        all &= worst <= 1e-5;
        parts.push(format!("{kind} {worst:.1e}"));
    }
    Verdict::new(
        all,
        format!("worst relative error per activation: {}", parts.join(", ")),
    )
}

fn likelihood() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut bce_worst = 0.0_f64;
    for _ in 0..1000 {
        let m = rng.random_range(1..=100);
        let q: Vec<f64> = (0..m).map(|_| rng.random_range(1e-4..1.0 - 1e-4)).collect();
        let y: Vec<f64> = (0..m)
            .map(|_| f64::from(u8::from(rng.random_bool(0.5))))
            .collect();
        bce_worst = bce_worst
            .max((bce_loss(&q, &y).unwrap() - bernoulli_nll_oracle(&q, &y).unwrap()).abs());
    }
    let mut lambda_worst = 0.0_f64;
    for i in 1..=19 {
        for j in 1..=19 {
            let (y, q) = (0.05 * i as f64, 0.05 * j as f64);
            let d = saddle_point_lambda(y, q).unwrap() - saddle_point_lambda_bisect(y, q).unwrap();
            lambda_worst = lambda_worst.max(d.abs());
        }
    }
    Verdict::new(
        bce_worst <= 1e-12 && lambda_worst <= 1e-8,
        format!("cross-entropy vs likelihood {bce_worst:.1e}, multiplier vs bisection {lambda_worst:.1e}"),
    )
}

fn hessian_machinery() -> Verdict {
    let a = [[2.0, 1.0], [1.0, 3.0]];
    let est = hessian_fd(
        |t| {
            Ok(vec![
                a[0][0] * t[0] + a[0][1] * t[1],
                a[1][0] * t[0] + a[1][1] * t[1],
            ])
        },
        &[0.3, -2.0],
    )
    .unwrap();
    let quad = est
        .matrix
        .as_slice()
        .iter()
        .zip(a.iter().flatten())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut trace, mut recon) = (0.0_f64, 0.0_f64);
    for n in 1..=10 {
        for _ in 0..10 {
            let m: Matrix = random_symmetric(&mut rng, n);
            let eig = eigen_symmetric(&m).unwrap();
            let sum: f64 = eig.values.iter().sum();
            let scale = eig.values.iter().map(|v| v.abs()).sum::<f64>();
            trace = trace.max((sum - m.trace()).abs() / scale);
            let back = eig.reconstruct();
            let err = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| (back[(i, j)] - m[(i, j)]).abs())
                .fold(0.0_f64, f64::max);
            recon = recon.max(err);
        }
    }
    Verdict::new(
        quad <= 1e-6 && trace <= 1e-10 && recon <= 1e-8,
        format!("quadratic {quad:.1e}, trace {trace:.1e}, reconstruction {recon:.1e}"),
    )
}

fn runs(base: &RunConfig, kinds: &[ActivationKind]) -> Vec<Vec<RunResult>> {
    kinds
        .iter()
        .map(|&kind| {
            (0..SEEDS)
                .map(|seed| {
                    let cfg = RunConfig {
                        activation: kind,
                        seed,
                        svg: false,
                        ..base.clone()
                    };
                    train_run(&cfg).unwrap()
                })
                .collect()
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn nonlinear_task() -> Verdict {
    use ActivationKind::{ReLU, Sigmoid, Swish};
    let all = runs(&RunConfig::nonlinear(), &[Swish, ReLU, Sigmoid]);
    let (swish, relu, sigmoid) = (&all[0], &all[1], &all[2]);
    let final_loss =
        |rs: &[RunResult]| median(rs.iter().map(|r| r.final_record().loss_train).collect());
    let (ls, lr) = (final_loss(swish), final_loss(relu));
    let flat = relu
        .iter()
        .filter(|r| r.trajectory.iter().all(|t| t.gamma > 0.0))
        .count();
    let zr = |r: &RunResult| r.final_record().zero_residual_frac;
    let wins = (0..SEEDS as usize)
        .filter(|&s| zr(&swish[s]) >= zr(&relu[s]) && zr(&swish[s]) >= zr(&sigmoid[s]))
        .count();
    Verdict::new(
        ls < lr && flat >= 8 && wins >= 7,
        format!(
            "(a) median loss swish {ls:.2e} < relu {lr:.2e}; (b) relu gamma > 0 throughout in {flat}/10; \
             (c) swish zero-residual fraction highest in {wins}/10"
        ),
    )
}

fn linear_task() -> Verdict {
    use ActivationKind::{ReLU, Sigmoid, Swish};
    let kinds = [Swish, ReLU, Sigmoid];
    let all = runs(&RunConfig::linear(), &kinds);
    let counts: Vec<usize> = all
        .iter()
        .map(|rs| {
            rs.iter()
                .filter(|r| r.final_record().acc_train == 1.0 && r.final_record().acc_test == 1.0)
                .count()
        })
        .collect();
    let detail = kinds
        .iter()
        .zip(&counts)
        .map(|(k, c)| format!("{k} {c}/10"))
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(
        counts.iter().all(|&c| c >= 9),
        format!("full train and test accuracy: {detail}"),
    )
}

fn digits_task() -> Verdict {
    use ActivationKind::{ReLU, Swish};
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/digits.csv");
    let mut base = RunConfig::digits(path);
    base.checkpoint_every = Some(base.epochs);
    let all = runs(&base, &[Swish, ReLU]);
    let std = |r: &RunResult| r.final_spectrum().std_dev();
    let wins = (0..SEEDS as usize)
        .filter(|&s| std(&all[0][s]) > std(&all[1][s]))
        .count();
    let ms = median(all[0].iter().map(std).collect());
    let mr = median(all[1].iter().map(std).collect());
    Verdict::new(
        wins >= 7,
        format!(
            "swish spectrum wider in {wins}/10 seeds; median std swish {ms:.3e}, relu {mr:.3e}"
        ),
    )
}

fn determinism() -> Verdict {
    let cfg = RunConfig {
        svg: false,
        ..RunConfig::nonlinear()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let files: Vec<_> = dirs
        .iter()
        .map(|d| emit_outputs(&train_run(&cfg).unwrap(), d.path()).unwrap())
        .collect();
    let same_traj =
        fs::read(&files[0].trajectory).unwrap() == fs::read(&files[1].trajectory).unwrap();
    let same_spec = fs::read(&files[0].spectrum).unwrap() == fs::read(&files[1].spectrum).unwrap();
    Verdict::new(
        same_traj && same_spec,
        format!("trajectory.csv identical: {same_traj}, spectrum.csv identical: {same_spec}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("mean-field identities", mean_field_identities),
        ("relu limit", relu_limit),
        ("backprop vs finite differences", backprop),
        ("likelihood consistency", likelihood),
        ("hessian machinery", hessian_machinery),
        ("nonlinear task, 10 seeds", nonlinear_task),
        ("linear task, 10 seeds", linear_task),
        ("digits spectrum spread, 10 seeds", digits_task),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let status = if v.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{status}] {name}: {} ({:.1}s)",
            v.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!v.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

//! Full-batch training with checkpointed loss, accuracy, residual and
//! Hessian-spectrum diagnostics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::activation::ActivationKind;
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::hessian::{self, SpectrumReport};
use crate::linalg::Matrix;
use crate::loss;
use crate::network::{self, Network};
use crate::optim::{adam_step, AdamState};

use super::config::{DatasetKind, RunConfig};

/// One checkpoint row of `trajectory.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    pub loss_train: f64,
    pub loss_test: f64,
    pub acc_train: f64,
    pub acc_test: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub zero_residual_frac: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: RunConfig,
    pub trajectory: Vec<TrajectoryRecord>,
    pub spectra: Vec<SpectrumReport>,
    pub network: Network,
    /// Training loss at the start of every epoch, before its update.
    pub loss_history: Vec<f64>,
    /// Training accuracy at the start of every epoch.
    pub acc_history: Vec<f64>,
    pub param_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Smallest hidden activation seen at any checkpoint.
    pub min_hidden_activation: f64,
    pub max_hessian_asymmetry: f64,
}

impl RunResult {
    pub fn final_record(&self) -> &TrajectoryRecord {
        self.trajectory
            .last()
            .expect("a run has at least one checkpoint")
    }

    pub fn final_spectrum(&self) -> &SpectrumReport {
        self.spectra
            .last()
            .expect("a run has at least one checkpoint")
    }

    /// First epoch whose starting training loss is at or below `threshold`.
    pub fn epochs_to_loss(&self, threshold: f64) -> Option<usize> {
        self.loss_history
            .iter()
            .position(|&l| l <= threshold)
            .map(|i| i + 1)
    }

    /// First epoch that starts with perfect training accuracy.
    pub fn epochs_to_full_accuracy(&self) -> Option<usize> {
        self.acc_history
            .iter()
            .position(|&a| a >= 1.0)
            .map(|i| i + 1)
    }
}

/// Builds the full dataset named by `config`.
pub fn build_dataset(config: &RunConfig) -> Result<Dataset> {
    match config.dataset {
        DatasetKind::Linear => {
            dataset::gen_linear(config.data_size, config.data_seed, config.linear_margin)
        }
        DatasetKind::Nonlinear => {
            dataset::gen_nonlinear(config.data_size, config.data_seed, config.moons_noise)
        }
        DatasetKind::Digits => {
            dataset::load_digits_csv(&config.data_path, config.class_a, config.class_b)
        }
    }
}

/// Train and test sets for `config`.
pub fn build_split(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let ds = build_dataset(config)?;
    dataset::split(&ds, config.test_fraction, config.data_seed)
}

/// Freshly initialized network for `config` on inputs of width `n_features`.
pub fn build_network(config: &RunConfig, n_features: usize) -> Result<Network> {
    let mut sizes = Vec::with_capacity(config.architecture.len() + 2);
    sizes.push(n_features);
    sizes.extend_from_slice(&config.architecture);
    sizes.push(1);
    let net = Network::init(&sizes, config.activation, config.seed, config.beta0)?
        .with_beta_trainable(config.beta_trainable);
    if config.column_normalize {
        net.column_normalize()
    } else {
        Ok(net)
    }
}

/// Hessian of the mean training loss at the network's current parameters.
///
/// ReLU networks are probed under the activation pattern of the base point,
/// so the result is the curvature of the smooth piece containing it.
pub fn spectrum_at(
    net: &Network,
    train: &Dataset,
    zero_tol_rel: f64,
    epoch: usize,
) -> Result<SpectrumReport> {
    let theta = net.flatten_params();
    let has_relu = (0..net.n_layers()).any(|l| net.layer_kind(l) == ActivationKind::ReLU);
    let estimate = if has_relu {
        let pattern = net.activation_pattern(&train.x)?;
        hessian::hessian_fd(
            |t| {
                net.unflatten_params(t)?
                    .gradient_with_pattern(&train.x, &train.y, &pattern)
            },
            &theta,
        )?
    } else {
        hessian::hessian_fd(
            |t| {
                Ok(net
                    .unflatten_params(t)?
                    .loss_and_gradient(&train.x, &train.y)?
                    .1)
            },
            &theta,
        )?
    };
    let eigs = hessian::eigenvalues_symmetric(&estimate.matrix)?;
    let mut report = SpectrumReport::new(epoch, eigs, zero_tol_rel)?;
    report.asymmetry = estimate.asymmetry;
    Ok(report)
}

fn evaluate(net: &Network, x: &Matrix, y: &[f64]) -> Result<(f64, f64, Vec<f64>, f64)> {
    let cache = net.forward(x)?;
    let loss = loss::bce_loss(&cache.outputs, y)?;
    let acc = network::accuracy(&cache.outputs, y, 0.5)?;
    let min_hidden = cache.acts[..cache.acts.len() - 1]
        .iter()
        .flat_map(|a| a.as_slice().iter().copied())
        .fold(f64::INFINITY, f64::min);
    Ok((loss, acc, cache.outputs, min_hidden))
}

/// Runs one full-batch training job described by `config`.
pub fn train_run(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let (train, test) = build_split(config)?;
    let mut net = build_network(config, train.n_features())?;
    let adam = config.adam();
    let beta_coords = net.beta_indices();
    let mut state = AdamState::new(net.param_count());
    let every = config.effective_checkpoint_every();

    let mut trajectory = Vec::new();
    let mut spectra = Vec::new();
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut acc_history = Vec::with_capacity(config.epochs);
    let mut min_hidden_activation = f64::INFINITY;
    let mut max_hessian_asymmetry = 0.0_f64;

    for epoch in 1..=config.epochs {
        let cache = net.forward(&train.x)?;
        let loss = loss::bce_loss(&cache.outputs, &train.y)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        loss_history.push(loss);
        acc_history.push(network::accuracy(&cache.outputs, &train.y, 0.5)?);

        let grad = net.backward(&cache, &train.y)?.flatten(&net);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch, loss });
        }
        let mut theta = net.flatten_params();
        adam_step(&mut theta, &grad, &mut state, &adam, &beta_coords)?;
        net = net.unflatten_params(&theta)?;
        if config.column_normalize {
            net = net.column_normalize()?;
        }

        if epoch % every == 0 || epoch == config.epochs {
            let (loss_train, acc_train, outputs, min_hidden) = evaluate(&net, &train.x, &train.y)?;
            if !loss_train.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: loss_train,
                });
            }
            let (loss_test, acc_test, _, _) = evaluate(&net, &test.x, &test.y)?;
            let residuals = loss::residual_report(&outputs, &train.y, config.residual_tol)?;
            let spectrum = spectrum_at(&net, &train, config.zero_tol_rel, epoch)?;
            min_hidden_activation = min_hidden_activation.min(min_hidden);
            max_hessian_asymmetry = max_hessian_asymmetry.max(spectrum.asymmetry);
            trajectory.push(TrajectoryRecord {
                epoch,
                loss_train,
                loss_test,
                acc_train,
                acc_test,
                alpha: spectrum.alpha,
                gamma: spectrum.gamma,
                zero_residual_frac: residuals.zero_fraction,
            });
            spectra.push(spectrum);
        }
    }

    Ok(RunResult {
        config: config.clone(),
        trajectory,
        spectra,
        param_dim: net.param_count(),
        network: net,
        loss_history,
        acc_history,
        n_train: train.len(),
        n_test: test.len(),
        min_hidden_activation,
        max_hessian_asymmetry,
    })
}

/// End-of-run numbers for one (activation, seed) cell of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub activation: ActivationKind,
    pub seed: u64,
    pub final_loss_train: f64,
    pub final_loss_test: f64,
    pub final_acc_train: f64,
    pub final_acc_test: f64,
    pub epochs_to_loss_threshold: Option<usize>,
    pub epochs_to_full_accuracy: Option<usize>,
    pub final_alpha: f64,
    pub final_gamma: f64,
    /// γ > 0 held at every checkpoint of the run.
    pub gamma_always_positive: bool,
    pub final_zero_residual_frac: f64,
    /// Sample standard deviation of the final eigenvalue spectrum.
    pub final_eig_std: f64,
    pub min_hidden_activation: f64,
}

impl CellSummary {
    pub fn from_run(run: &RunResult, loss_threshold: f64) -> Self {
        let last = run.final_record();
        Self {
            activation: run.config.activation,
            seed: run.config.seed,
            final_loss_train: last.loss_train,
            final_loss_test: last.loss_test,
            final_acc_train: last.acc_train,
            final_acc_test: last.acc_test,
            epochs_to_loss_threshold: run.epochs_to_loss(loss_threshold),
            epochs_to_full_accuracy: run.epochs_to_full_accuracy(),
            final_alpha: last.alpha,
            final_gamma: last.gamma,
            gamma_always_positive: run.trajectory.iter().all(|r| r.gamma > 0.0),
            final_zero_residual_frac: last.zero_residual_frac,
            final_eig_std: run.final_spectrum().std_dev(),
            min_hidden_activation: run.min_hidden_activation,
        }
    }
}

/// Medians over seeds for one activation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivationSummary {
    pub activation: ActivationKind,
    pub seeds: usize,
    pub median_final_loss_train: f64,
    pub median_final_loss_test: f64,
    pub median_final_acc_test: f64,
    /// Median over the seeds that reached the threshold; `None` if none did.
    pub median_epochs_to_loss_threshold: Option<f64>,
    pub reached_loss_threshold: usize,
    pub median_final_alpha: f64,
    pub median_final_gamma: f64,
    pub median_final_zero_residual_frac: f64,
    pub median_final_eig_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub loss_threshold: f64,
    pub seeds: Vec<u64>,
    pub activations: Vec<ActivationSummary>,
    pub cells: Vec<CellSummary>,
}

impl CompareSummary {
    pub fn cells_for(&self, kind: ActivationKind) -> impl Iterator<Item = &CellSummary> {
        self.cells.iter().filter(move |c| c.activation == kind)
    }

    /// The cell for (`kind`, `seed`), if it was run.
    pub fn cell(&self, kind: ActivationKind, seed: u64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.activation == kind && c.seed == seed)
    }

    pub fn summary_for(&self, kind: ActivationKind) -> Option<&ActivationSummary> {
        self.activations.iter().find(|a| a.activation == kind)
    }
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn same_experiment(a: &RunConfig, b: &RunConfig) -> bool {
    let strip = |c: &RunConfig| RunConfig {
        activation: ActivationKind::Linear,
        seed: 0,
        output_dir: Default::default(),
        ..c.clone()
    };
    strip(a) == strip(b)
}

/// Trains every config under every seed and summarizes per activation.
///
/// `on_run` sees each finished run, e.g. to write its outputs.
pub fn compare_runs<F>(
    configs: &[RunConfig],
    seeds: &[u64],
    loss_threshold: f64,
    mut on_run: F,
) -> Result<CompareSummary>
where
    F: FnMut(&RunResult) -> Result<()>,
{
    if configs.len() < 2 {
        return Err(Error::InvalidArgument(
            "a comparison needs at least two configurations".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "a comparison needs at least one seed".into(),
        ));
    }
    if let Some(c) = configs.iter().find(|c| !same_experiment(c, &configs[0])) {
        return Err(Error::InvalidArgument(format!(
            "configuration for {} differs from the first in more than the activation",
            c.activation
        )));
    }
    let mut kinds: Vec<ActivationKind> = Vec::new();
    for c in configs {
        if kinds.contains(&c.activation) {
            return Err(Error::InvalidArgument(format!(
                "activation {} appears twice",
                c.activation
            )));
        }
        kinds.push(c.activation);
    }

    let mut cells = Vec::with_capacity(configs.len() * seeds.len());
    for config in configs {
        for &seed in seeds {
            let cfg = RunConfig {
                seed,
                ..config.clone()
            };
            let run = train_run(&cfg)?;
            on_run(&run)?;
            cells.push(CellSummary::from_run(&run, loss_threshold));
        }
    }

    let mut by_kind: BTreeMap<usize, Vec<&CellSummary>> = BTreeMap::new();
    for cell in &cells {
        let pos = kinds.iter().position(|&k| k == cell.activation).unwrap();
        by_kind.entry(pos).or_default().push(cell);
    }
    let activations = by_kind
        .into_iter()
        .map(|(pos, group)| {
            let pick = |f: fn(&CellSummary) -> f64| {
                median(&group.iter().map(|c| f(c)).collect::<Vec<_>>())
            };
            let reached: Vec<f64> = group
                .iter()
                .filter_map(|c| c.epochs_to_loss_threshold.map(|e| e as f64))
                .collect();
            ActivationSummary {
                activation: kinds[pos],
                seeds: group.len(),
                median_final_loss_train: pick(|c| c.final_loss_train),
                median_final_loss_test: pick(|c| c.final_loss_test),
                median_final_acc_test: pick(|c| c.final_acc_test),
                median_epochs_to_loss_threshold: (!reached.is_empty()).then(|| median(&reached)),
                reached_loss_threshold: reached.len(),
                median_final_alpha: pick(|c| c.final_alpha),
                median_final_gamma: pick(|c| c.final_gamma),
                median_final_zero_residual_frac: pick(|c| c.final_zero_residual_frac),
                median_final_eig_std: pick(|c| c.final_eig_std),
            }
        })
        .collect();

    Ok(CompareSummary {
        loss_threshold,
        seeds: seeds.to_vec(),
        activations,
        cells,
    })
}

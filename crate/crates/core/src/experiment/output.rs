//! Files written for a finished run, and the checkpoint they can be reloaded from.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::hessian::{self, eig_histogram, SpectrumReport};
use crate::network::{Network, NetworkSnapshot};

use super::config::RunConfig;
use super::runner::{self, RunResult, TrajectoryRecord};
use super::svg::{self, Series};

pub const TRAJECTORY_CSV_HEADER: &str =
    "epoch,loss_train,loss_test,acc_train,acc_test,alpha,gamma,zero_residual_frac";

const HISTOGRAM_BINS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub trajectory: PathBuf,
    pub spectrum: PathBuf,
    pub summary: PathBuf,
    pub checkpoint: PathBuf,
    pub svgs: Vec<PathBuf>,
}

pub fn write_trajectory_csv<W: Write>(
    mut out: W,
    rows: &[TrajectoryRecord],
) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch,
            r.loss_train,
            r.loss_test,
            r.acc_train,
            r.acc_test,
            r.alpha,
            r.gamma,
            r.zero_residual_frac
        )?;
    }
    Ok(())
}

/// Final network plus everything needed to rebuild its training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub config: RunConfig,
    pub network: NetworkSnapshot,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn network(&self) -> Result<Network> {
        Network::try_from(&self.network)
    }

    /// Recomputes the Hessian spectrum on the checkpoint's training split.
    pub fn spectrum(&self, zero_tol_rel: f64) -> Result<SpectrumReport> {
        let (train, _) = runner::build_split(&self.config)?;
        runner::spectrum_at(&self.network()?, &train, zero_tol_rel, self.epoch)
    }
}

/// `summary.json`: config fields, `final_*` metrics and `param_dim`.
pub fn summary_json(run: &RunResult) -> Value {
    let mut map = match serde_json::to_value(&run.config) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    };
    let last = run.final_record();
    let spectrum = run.final_spectrum();
    let extra = json!({
        "checkpoint_every_effective": run.config.effective_checkpoint_every(),
        "final_epoch": last.epoch,
        "final_loss_train": last.loss_train,
        "final_loss_test": last.loss_test,
        "final_acc_train": last.acc_train,
        "final_acc_test": last.acc_test,
        "final_alpha": last.alpha,
        "final_gamma": last.gamma,
        "final_zero_residual_frac": last.zero_residual_frac,
        "final_eig_min": spectrum.eigenvalues.first(),
        "final_eig_max": spectrum.eigenvalues.last(),
        "final_eig_std": spectrum.std_dev(),
        "final_betas": run.network.betas().iter().map(|b| b.get()).collect::<Vec<_>>(),
        "param_dim": run.param_dim,
        "n_train": run.n_train,
        "n_test": run.n_test,
        "checkpoints": run.trajectory.len(),
        "min_hidden_activation": run.min_hidden_activation,
        "max_hessian_asymmetry": run.max_hessian_asymmetry,
    });
    if let Value::Object(e) = extra {
        map.extend(e);
    }
    Value::Object(map)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes every artifact of `run` into `dir`, creating it if needed.
pub fn emit_outputs(run: &RunResult, dir: impl AsRef<Path>) -> Result<OutputFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let trajectory = dir.join("trajectory.csv");
    let mut out = create(&trajectory)?;
    write_trajectory_csv(&mut out, &run.trajectory)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&trajectory, e))?;

    let spectrum = dir.join("spectrum.csv");
    let mut out = create(&spectrum)?;
    hessian::write_spectrum_csv(&mut out, &run.spectra)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&spectrum, e))?;

    let summary = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary_json(run)).map_err(|source| Error::Json {
        path: summary.clone(),
        source,
    })?;
    write_text(&summary, &(text + "\n"))?;

    let checkpoint = dir.join("checkpoint.json");
    let ck = Checkpoint {
        epoch: run.final_record().epoch,
        config: run.config.clone(),
        network: NetworkSnapshot::from(&run.network),
    };
    let text = serde_json::to_string(&ck).map_err(|source| Error::Json {
        path: checkpoint.clone(),
        source,
    })?;
    write_text(&checkpoint, &(text + "\n"))?;

    let mut svgs = Vec::new();
    if run.config.svg {
        let path = dir.join("loss.svg");
        let per_epoch: Vec<(f64, f64)> = run
            .loss_history
            .iter()
            .enumerate()
            .map(|(i, &l)| ((i + 1) as f64, l))
            .collect();
        let test: Vec<(f64, f64)> = run
            .trajectory
            .iter()
            .map(|r| (r.epoch as f64, r.loss_test))
            .collect();
        let title = format!("{} on {}", run.config.activation, run.config.dataset.name());
        write_text(
            &path,
            &svg::line_chart(
                &title,
                "epoch",
                "binary cross-entropy",
                &[
                    Series {
                        name: "train",
                        points: per_epoch,
                    },
                    Series {
                        name: "test",
                        points: test,
                    },
                ],
            ),
        )?;
        svgs.push(path);

        let path = dir.join("spectrum_hist.svg");
        let final_spec = run.final_spectrum();
        let hist = eig_histogram(&final_spec.eigenvalues, HISTOGRAM_BINS)?;
        let title = format!(
            "Hessian eigenvalues at epoch {} (alpha {:.3}, gamma {:.3})",
            final_spec.checkpoint_epoch, final_spec.alpha, final_spec.gamma
        );
        write_text(&path, &svg::histogram_chart(&title, "eigenvalue", &hist))?;
        svgs.push(path);
    }

    Ok(OutputFiles {
        trajectory,
        spectrum,
        summary,
        checkpoint,
        svgs,
    })
}

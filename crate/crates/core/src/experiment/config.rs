//! Run configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::hessian::DEFAULT_ZERO_TOL_REL;
use crate::loss::DEFAULT_RESIDUAL_TOL;
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Linear,
    Nonlinear,
    Digits,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(DatasetKind::Linear),
            "nonlinear" | "moons" => Ok(DatasetKind::Nonlinear),
            "digits" => Ok(DatasetKind::Digits),
            other => Err(Error::Config(format!(
                "unknown dataset {other:?} (expected linear, nonlinear or digits)"
            ))),
        }
    }
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Linear => "linear",
            DatasetKind::Nonlinear => "nonlinear",
            DatasetKind::Digits => "digits",
        }
    }
}

/// Everything that determines a training run.
///
/// `seed` drives the weight initialization only; `data_seed` fixes the
/// generated dataset and the train/test split, so runs that differ in `seed`
/// see the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Digits CSV location; ignored by the synthetic datasets.
    pub data_path: PathBuf,
    pub class_a: u8,
    pub class_b: u8,
    pub data_seed: u64,
    /// Example count for the synthetic datasets.
    pub data_size: usize,
    pub linear_margin: f64,
    pub moons_noise: f64,
    pub architecture: Vec<usize>,
    pub activation: ActivationKind,
    pub beta0: f64,
    pub beta_trainable: bool,
    pub column_normalize: bool,
    pub learning_rate: f64,
    pub adam_b1: f64,
    pub adam_b2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// `None` means `max(1, epochs / 20)`.
    pub checkpoint_every: Option<usize>,
    pub seed: u64,
    pub residual_tol: f64,
    pub zero_tol_rel: f64,
    pub test_fraction: f64,
    pub output_dir: PathBuf,
    /// Also render `loss.svg` and `spectrum_hist.svg`.
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::nonlinear()
    }
}

impl RunConfig {
    /// Valid keys of the config file, in file order.
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "data_path",
        "class_a",
        "class_b",
        "data_seed",
        "data_size",
        "linear_margin",
        "moons_noise",
        "architecture",
        "activation",
        "beta0",
        "beta_trainable",
        "column_normalize",
        "learning_rate",
        "adam_b1",
        "adam_b2",
        "adam_eps",
        "epochs",
        "checkpoint_every",
        "seed",
        "residual_tol",
        "zero_tol_rel",
        "test_fraction",
        "output_dir",
        "svg",
    ];

    /// 51-example separable task, one hidden layer of 10 units.
    pub fn linear() -> Self {
        let adam = AdamConfig::default();
        Self {
            dataset: DatasetKind::Linear,
            data_path: PathBuf::from("data/digits.csv"),
            class_a: 0,
            class_b: 1,
            data_seed: 0,
            data_size: crate::dataset::LINEAR_DEFAULT_SIZE,
            linear_margin: 0.2,
            moons_noise: 0.05,
            architecture: vec![10],
            activation: ActivationKind::Swish,
            beta0: 1.0,
            beta_trainable: true,
            column_normalize: false,
            learning_rate: adam.learning_rate,
            adam_b1: adam.b1,
            adam_b2: adam.b2,
            adam_eps: adam.eps,
            epochs: 2000,
            checkpoint_every: None,
            seed: 0,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            zero_tol_rel: DEFAULT_ZERO_TOL_REL,
            test_fraction: 0.2,
            output_dir: PathBuf::from("runs/linear"),
            svg: true,
        }
    }

    /// 863-example half-moons task with hidden layers of 8 and 2 units.
    pub fn nonlinear() -> Self {
        Self {
            dataset: DatasetKind::Nonlinear,
            data_size: crate::dataset::NONLINEAR_DEFAULT_SIZE,
            architecture: vec![8, 2],
            epochs: 5000,
            output_dir: PathBuf::from("runs/nonlinear"),
            ..Self::linear()
        }
    }

    /// Two-class digits subset with one hidden layer of 25 units.
    pub fn digits(path: impl Into<PathBuf>) -> Self {
        Self {
            dataset: DatasetKind::Digits,
            data_path: path.into(),
            architecture: vec![25],
            epochs: 3000,
            output_dir: PathBuf::from("runs/digits"),
            ..Self::linear()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            b1: self.adam_b1,
            b2: self.adam_b2,
            eps: self.adam_eps,
        }
    }

    pub fn effective_checkpoint_every(&self) -> usize {
        self.checkpoint_every.unwrap_or((self.epochs / 20).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        self.adam()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let every = self.effective_checkpoint_every();
        if every < 1 || every > self.epochs {
            return Err(Error::Config(format!(
                "checkpoint_every must lie in [1, epochs={}], got {every}",
                self.epochs
            )));
        }
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::Config(format!(
                "beta0 must be > 0, got {}",
                self.beta0
            )));
        }
        if self.architecture.contains(&0) {
            return Err(Error::Config(format!(
                "hidden layer sizes must be positive, got {:?}",
                self.architecture
            )));
        }
        if !(self.residual_tol > 0.0) {
            return Err(Error::Config("residual_tol must be > 0".into()));
        }
        if !(self.zero_tol_rel >= 0.0) {
            return Err(Error::Config("zero_tol_rel must be >= 0".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| {
            Error::Config(format!(
                "invalid value {value:?} for {key}: expected {what}"
            ))
        };
        let float = || value.parse::<f64>().map_err(|_| bad("a number"));
        let uint = || {
            value
                .parse::<u64>()
                .map_err(|_| bad("a non-negative integer"))
        };
        let flag = || parse_bool(value).ok_or_else(|| bad("true or false"));
        match key {
            "dataset" => self.dataset = value.parse()?,
            "data_path" => self.data_path = PathBuf::from(value),
            "class_a" => self.class_a = value.parse().map_err(|_| bad("a digit 0-9"))?,
            "class_b" => self.class_b = value.parse().map_err(|_| bad("a digit 0-9"))?,
            "data_seed" => self.data_seed = uint()?,
            "data_size" => self.data_size = uint()? as usize,
            "linear_margin" => self.linear_margin = float()?,
            "moons_noise" => self.moons_noise = float()?,
            "architecture" => {
                self.architecture = if value.is_empty() || value == "none" {
                    Vec::new()
                } else {
                    value
                        .split([',', '-', 'x'])
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("comma-separated hidden sizes such as 8,2"))?
                }
            }
            "activation" => {
                self.activation = value
                    .parse()
                    .map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "beta0" => self.beta0 = float()?,
            "beta_trainable" => self.beta_trainable = flag()?,
            "column_normalize" => self.column_normalize = flag()?,
            "learning_rate" => self.learning_rate = float()?,
            "adam_b1" => self.adam_b1 = float()?,
            "adam_b2" => self.adam_b2 = float()?,
            "adam_eps" => self.adam_eps = float()?,
            "epochs" => self.epochs = uint()? as usize,
            "checkpoint_every" => {
                self.checkpoint_every = if value == "auto" {
                    None
                } else {
                    Some(uint()? as usize)
                }
            }
            "seed" => self.seed = uint()?,
            "residual_tol" => self.residual_tol = float()?,
            "zero_tol_rel" => self.zero_tol_rel = float()?,
            "test_fraction" => self.test_fraction = float()?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "svg" => self.svg = flag()?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key {other:?}; valid keys: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses a config file body on top of `self`.
    ///
    /// Lines are `key = value`; `#` starts a comment; blank lines are skipped.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Reads a config file. The `dataset` key, when present, selects the
    /// preset whose defaults the remaining keys override.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text)
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut probe = RunConfig::default();
        probe.apply_str(text)?;
        let mut cfg = match probe.dataset {
            DatasetKind::Linear => RunConfig::linear(),
            DatasetKind::Nonlinear => RunConfig::nonlinear(),
            DatasetKind::Digits => RunConfig::digits(probe.data_path),
        };
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    /// Renders the config in the file format; parsing the result gives `self` back.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for &key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.value_of(key));
        }
        s
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "dataset" => self.dataset.name().to_string(),
            "data_path" => self.data_path.display().to_string(),
            "class_a" => self.class_a.to_string(),
            "class_b" => self.class_b.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "data_size" => self.data_size.to_string(),
            "linear_margin" => self.linear_margin.to_string(),
            "moons_noise" => self.moons_noise.to_string(),
            "architecture" => {
                if self.architecture.is_empty() {
                    "none".into()
                } else {
                    self.architecture
                        .iter()
                        .map(usize::to_string)
                        .collect::<Vec<_>>()
                        .join(",")
                }
            }
            "activation" => self.activation.name().to_string(),
            "beta0" => self.beta0.to_string(),
            "beta_trainable" => self.beta_trainable.to_string(),
            "column_normalize" => self.column_normalize.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "adam_b1" => self.adam_b1.to_string(),
            "adam_b2" => self.adam_b2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "epochs" => self.epochs.to_string(),
            "checkpoint_every" => self
                .checkpoint_every
                .map_or_else(|| "auto".to_string(), |c| c.to_string()),
            "seed" => self.seed.to_string(),
            "residual_tol" => self.residual_tol.to_string(),
            "zero_tol_rel" => self.zero_tol_rel.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "svg" => self.svg.to_string(),
            _ => unreachable!("value_of called with unknown key {key}"),
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

//! Scalar mean-field activation mathematics.
//!
//! Every hidden unit is modeled as a binary gate `s ∈ {0, 1}` coupled to its
//! pre-activation `h` with inverse noise `β`. The gate partition function is
//! `Z = 1 + exp(β h)`; its derivatives produce the whole activation family:
//!
//! * `β⁻¹ ∂_b ln Z = σ(β h)` is the probability the gate is open,
//! * `∂_β ln Z = h σ(β h)` is the expected transmitted signal (Swish),
//! * `β → ∞` turns Swish into ReLU, `β → 0` into `h / 2`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Pre-activation magnitude above which `ln(1 + e^x)` switches to `x + ln(1 + e^-x)`.
const LOG_PARTITION_CROSSOVER: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    #[serde(rename = "relu")]
    ReLU,
    Linear,
    Swish,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] = [
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::ReLU,
        ActivationKind::Linear,
        ActivationKind::Swish,
    ];

    /// Whether the activation value changes with β.
    ///
    /// Swish is the only hidden activation that cannot absorb β into the
    /// weights, but Sigmoid and Tanh still read β as an input scale.
    pub fn depends_on_beta(self) -> bool {
        matches!(
            self,
            ActivationKind::Swish | ActivationKind::Sigmoid | ActivationKind::Tanh
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::ReLU => "relu",
            ActivationKind::Linear => "linear",
            ActivationKind::Swish => "swish",
        }
    }

    /// Unchecked evaluation used in the network hot loops.
    #[inline]
    pub fn value(self, h: f64, beta: f64) -> f64 {
        match self {
            ActivationKind::Swish => h * sigmoid(beta * h),
            ActivationKind::Sigmoid => sigmoid(beta * h),
            ActivationKind::Tanh => (beta * h).tanh(),
            ActivationKind::ReLU => h.max(0.0),
            ActivationKind::Linear => h,
        }
    }

    /// Unchecked `∂ value / ∂h`.
    #[inline]
    pub fn grad_h(self, h: f64, beta: f64) -> f64 {
        match self {
            ActivationKind::Swish => {
                let x = beta * h;
                sigmoid(x) * (1.0 + h * beta * sigmoid(-x))
            }
            ActivationKind::Sigmoid => {
                let x = beta * h;
                beta * sigmoid(x) * sigmoid(-x)
            }
            ActivationKind::Tanh => {
                let t = (beta * h).tanh();
                beta * (1.0 - t * t)
            }
            ActivationKind::ReLU => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Linear => 1.0,
        }
    }

    /// Unchecked `∂ value / ∂β`.
    #[inline]
    pub fn grad_beta(self, h: f64, beta: f64) -> f64 {
        match self {
            ActivationKind::Swish => {
                let x = beta * h;
                h * h * sigmoid(x) * sigmoid(-x)
            }
            ActivationKind::Sigmoid => {
                let x = beta * h;
                h * sigmoid(x) * sigmoid(-x)
            }
            ActivationKind::Tanh => {
                let t = (beta * h).tanh();
                h * (1.0 - t * t)
            }
            ActivationKind::ReLU | ActivationKind::Linear => 0.0,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "tanh" => Ok(ActivationKind::Tanh),
            "relu" => Ok(ActivationKind::ReLU),
            "linear" => Ok(ActivationKind::Linear),
            "swish" => Ok(ActivationKind::Swish),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation {other:?} (expected sigmoid, tanh, relu, linear or swish)"
            ))),
        }
    }
}

/// Inverse-noise scale β of a layer. Always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseParam(f64);

impl NoiseParam {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta > 0.0 {
            Ok(Self(beta))
        } else {
            Err(Error::InvalidArgument(format!(
                "beta must be finite and > 0, got {beta}"
            )))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for NoiseParam {
    fn default() -> Self {
        Self(1.0)
    }
}

impl TryFrom<f64> for NoiseParam {
    type Error = Error;

    fn try_from(beta: f64) -> Result<Self> {
        Self::new(beta)
    }
}

impl From<NoiseParam> for f64 {
    fn from(beta: NoiseParam) -> f64 {
        beta.0
    }
}

/// Logistic function, evaluated without overflow for either sign.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softplus `ln(1 + e^x)` with the large-argument branch.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > LOG_PARTITION_CROSSOVER {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln Z = ln(1 + e^{β h})`, the log of the two-state gate partition function.
pub fn log_partition(h: f64, beta: NoiseParam) -> Result<f64> {
    ensure_finite(h, "pre-activation")?;
    Ok(softplus(beta.get() * h))
}

/// Probability that the gate is open, `σ(β h)`.
pub fn expected_gate(h: f64, beta: NoiseParam) -> Result<f64> {
    ensure_finite(h, "pre-activation")?;
    Ok(sigmoid(beta.get() * h))
}

pub fn activate(kind: ActivationKind, h: f64, beta: NoiseParam) -> Result<f64> {
    ensure_finite(h, "pre-activation")?;
    Ok(kind.value(h, beta.get()))
}

/// Derivative of [`activate`] with respect to the pre-activation.
///
/// The Sigmoid branch carries the factor β that the chain rule produces for
/// `σ(β h)`. ReLU uses the subgradient 0 at `h = 0`.
pub fn activate_dh(kind: ActivationKind, h: f64, beta: NoiseParam) -> Result<f64> {
    ensure_finite(h, "pre-activation")?;
    Ok(kind.grad_h(h, beta.get()))
}

/// Derivative of [`activate`] with respect to β; zero for ReLU and Linear.
pub fn activate_dbeta(kind: ActivationKind, h: f64, beta: NoiseParam) -> Result<f64> {
    ensure_finite(h, "pre-activation")?;
    Ok(kind.grad_beta(h, beta.get()))
}

/// Sup-norm distances of Swish from its two limits over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitReport {
    pub beta: f64,
    /// `max |swish(h, β) - relu(h)|`
    pub relu_gap: f64,
    /// Location of `relu_gap`.
    pub relu_gap_at: f64,
    /// `max |swish(h, β) - h / 2|`
    pub linear_gap: f64,
    pub linear_gap_at: f64,
}

impl LimitReport {
    /// Analytic bound on the ReLU gap, `1 / (e β)`, attained at `|h| = 1/β`.
    pub fn relu_bound(&self) -> f64 {
        1.0 / (std::f64::consts::E * self.beta)
    }
}

pub fn limit_check(h_grid: &[f64], beta: NoiseParam) -> Result<LimitReport> {
    if h_grid.is_empty() {
        return Err(Error::InvalidArgument("limit grid is empty".into()));
    }
    let b = beta.get();
    let mut report = LimitReport {
        beta: b,
        relu_gap: 0.0,
        relu_gap_at: h_grid[0],
        linear_gap: 0.0,
        linear_gap_at: h_grid[0],
    };
    for &h in h_grid {
        ensure_finite(h, "grid point")?;
        let swish = ActivationKind::Swish.value(h, b);
        let relu = (swish - h.max(0.0)).abs();
        if relu > report.relu_gap {
            report.relu_gap = relu;
            report.relu_gap_at = h;
        }
        let linear = (swish - 0.5 * h).abs();
        if linear > report.linear_gap {
            report.linear_gap = linear;
            report.linear_gap_at = h;
        }
    }
    Ok(report)
}

/// Evenly spaced grid `start, start + step, …` not exceeding `end` (plus rounding slack).
pub fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta(b: f64) -> NoiseParam {
        NoiseParam::new(b).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn log_partition_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((log_partition(0.0, beta(1.0)).unwrap() - ln2).abs() < 1e-15);
        assert!((log_partition(1000.0, beta(1.0)).unwrap() - 1000.0).abs() < 1e-12);
        assert!(log_partition(-1000.0, beta(1.0)).unwrap().abs() < 1e-12);
        // beta * h up to 1e6 stays finite
        assert!((log_partition(1e6, beta(1.0)).unwrap() - 1e6).abs() < 1e-9);
        assert!(matches!(
            log_partition(f64::NAN, beta(1.0)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(log_partition(f64::INFINITY, beta(1.0)).is_err());
    }

    #[test]
    fn log_partition_branches_agree_at_crossover() {
        let x: f64 = LOG_PARTITION_CROSSOVER;
        let direct = x.exp().ln_1p();
        let tail = x + (-x).exp().ln_1p();
        assert!((direct - tail).abs() < 1e-13);
    }

    #[test]
    fn expected_gate_values() {
        for b in [0.1, 1.0, 7.0] {
            assert_eq!(expected_gate(0.0, beta(b)).unwrap(), 0.5);
        }
        assert_eq!(expected_gate(1e4, beta(1.0)).unwrap(), 1.0);
        // central difference of ln Z under a bias shift, divided by β
        let (h, b, step) = (5.0, 1.0, 1e-5);
        let fd = (log_partition(h + step, beta(b)).unwrap()
            - log_partition(h - step, beta(b)).unwrap())
            / (2.0 * step)
            / b;
        assert!(rel_err(expected_gate(h, beta(b)).unwrap(), fd) < 1e-6);
    }

    #[test]
    fn activate_examples() {
        assert_eq!(
            activate(ActivationKind::Swish, 0.0, beta(7.0)).unwrap(),
            0.0
        );
        let s = activate(ActivationKind::Swish, 10.0, beta(100.0)).unwrap();
        assert!((s - 10.0).abs() <= 4e-3);
        assert_eq!(
            activate(ActivationKind::ReLU, -3.0, beta(1.0)).unwrap(),
            0.0
        );
        assert_eq!(
            activate(ActivationKind::Linear, -3.0, beta(9.0)).unwrap(),
            -3.0
        );
        assert!(activate(ActivationKind::Tanh, f64::NAN, beta(1.0)).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(
            activate_dh(ActivationKind::Swish, 0.0, beta(1.0)).unwrap(),
            0.5
        );
        assert_eq!(
            activate_dh(ActivationKind::Sigmoid, 0.0, beta(1.0)).unwrap(),
            0.25
        );
        assert_eq!(
            activate_dh(ActivationKind::ReLU, 0.0, beta(1.0)).unwrap(),
            0.0
        );
        assert_eq!(
            activate_dh(ActivationKind::Linear, 3.0, beta(2.0)).unwrap(),
            1.0
        );
        for b in [0.1, 1.0, 50.0] {
            assert_eq!(
                activate_dbeta(ActivationKind::Swish, 0.0, beta(b)).unwrap(),
                0.0
            );
        }
        for h in [-2.0, 0.0, 3.5] {
            assert_eq!(
                activate_dbeta(ActivationKind::ReLU, h, beta(3.0)).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn swish_is_gate_times_signal_bitwise() {
        for &h in &[-7.3, -0.2, 0.0, 0.4, 12.0] {
            for &b in &[0.01, 1.0, 30.0] {
                let swish = activate(ActivationKind::Swish, h, beta(b)).unwrap();
                let gate = expected_gate(h, beta(b)).unwrap();
                assert_eq!(swish.to_bits(), (gate * h).to_bits());
            }
        }
    }

    #[test]
    fn limit_check_bounds() {
        let g = grid(-10.0, 10.0, 0.01);
        assert_eq!(g.len(), 2001);
        let r = limit_check(&g, beta(100.0)).unwrap();
        assert!(r.relu_gap <= 1.0 / (100.0 * std::f64::consts::E) + 1e-12);
        // the gap is max_u u·σ(-u) / β ≈ 0.2785 / β, reached at βh ≈ -1.28;
        // the 0.01 grid only samples βh at integers, where the best is 1·σ(-1)
        assert!(r.relu_gap > 0.26 / 100.0);

        let g = grid(-1.0, 1.0, 0.01);
        // the bound β h²/4 is tight to O(β³), so only rounding separates them
        let r = limit_check(&g, beta(1e-6)).unwrap();
        assert!(r.linear_gap <= 2.5e-7 + 1e-15);
        assert!(r.linear_gap > 2.5e-7 - 1e-15);

        let r = limit_check(&[0.0], beta(1e12)).unwrap();
        assert_eq!(r.relu_gap, 0.0);

        assert!(matches!(
            limit_check(&[], beta(1.0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn noise_param_rejects_non_positive() {
        assert!(NoiseParam::new(0.0).is_err());
        assert!(NoiseParam::new(-1.0).is_err());
        assert!(NoiseParam::new(f64::NAN).is_err());
        assert_eq!(NoiseParam::default().get(), 1.0);
    }

    #[test]
    fn kind_round_trips_through_names() {
        for k in ActivationKind::ALL {
            assert_eq!(k.name().parse::<ActivationKind>().unwrap(), k);
        }
        assert!("gelu".parse::<ActivationKind>().is_err());
    }
}

//! Binary cross-entropy, residual diagnostics, and the likelihood identities
//! it is derived from.
//!
//! The network output `q = ŷ` parametrizes a Bernoulli outcome. The negative
//! log-likelihood of the observed labels is the cross-entropy; the same value
//! is recomputed by [`bernoulli_nll_oracle`] as a direct product of outcome
//! probabilities. The large-`m` saddle point of the label-constraint integral
//! fixes a multiplier per example, [`saddle_point_lambda`], which is checked
//! against a root search of the stationarity condition.

use serde::Serialize;

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const CLAMP_EPS: f64 = 1e-12;

/// Default `|ŷ - y|` below which a residual counts as zero.
pub const DEFAULT_RESIDUAL_TOL: f64 = 0.05;

/// Search interval of [`saddle_point_lambda_bisect`].
const BISECT_BOUND: f64 = 50.0;

#[inline]
fn clamp_prob(q: f64) -> f64 {
    q.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

fn check_pair(y_hat: &[f64], y: &[f64]) -> Result<()> {
    if y_hat.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} labels",
            y_hat.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(())
}

/// Mean negative log-likelihood `-(1/m) Σ [y ln ŷ + (1-y) ln(1-ŷ)]`.
pub fn bce_loss(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(y_hat, y)?;
    let total: f64 = y_hat
        .iter()
        .zip(y)
        .map(|(&q, &t)| {
            let q = clamp_prob(q);
            -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// `-(1/m) ln Π_μ q^y (1-q)^(1-y)` evaluated as a literal product.
///
/// The running product is rescaled by powers of two so long batches do not
/// underflow; the exponent is tracked separately and added back in the log.
pub fn bernoulli_nll_oracle(q: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(q, y)?;
    const SCALE_EXP: i32 = 512;
    let scale = 2f64.powi(SCALE_EXP);
    let mut product = 1.0_f64;
    let mut exponent: i64 = 0;
    for (&qi, &yi) in q.iter().zip(y) {
        let qi = clamp_prob(qi);
        // mass at ŷ = 1 weighted by y, mass at ŷ = 0 weighted by 1 - y
        product *= qi.powf(yi) * (1.0 - qi).powf(1.0 - yi);
        while product < 1.0 / scale {
            product *= scale;
            exponent -= i64::from(SCALE_EXP);
        }
    }
    let log_likelihood = product.ln() + exponent as f64 * std::f64::consts::LN_2;
    Ok(-log_likelihood / y.len() as f64)
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} must lie strictly inside (0, 1), got {v}"
        )))
    }
}

/// Closed-form stationary multiplier `Λ = ln[y(1-q) / (q(1-y))]`, where the
/// multiplier itself is `λ_c = iΛ`.
pub fn saddle_point_lambda(y: f64, q: f64) -> Result<f64> {
    check_open_unit("y", y)?;
    check_open_unit("q", q)?;
    Ok(((y * (1.0 - q)) / (q * (1.0 - y))).ln())
}

/// Solves the stationarity condition on the imaginary axis by bisection.
///
/// With `λ = iΛ` the condition `∂S/∂λ = 0` reads
/// `q e^Λ / (q e^Λ + 1 - q) = y`, whose left side increases in Λ.
pub fn saddle_point_lambda_bisect(y: f64, q: f64) -> Result<f64> {
    check_open_unit("y", y)?;
    check_open_unit("q", q)?;
    let residual = |lambda: f64| {
        let w = q * lambda.exp();
        w / (w + 1.0 - q) - y
    };
    let (mut lo, mut hi) = (-BISECT_BOUND, BISECT_BOUND);
    if residual(lo) > 0.0 || residual(hi) < 0.0 {
        return Err(Error::Domain(format!(
            "stationary point for y={y}, q={q} lies outside [-{BISECT_BOUND}, {BISECT_BOUND}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `e^μ = ŷ^μ - y^μ`
    pub residuals: Vec<f64>,
    pub zero_fraction: f64,
    pub tolerance: f64,
}

pub fn residual_report(y_hat: &[f64], y: &[f64], tolerance: f64) -> Result<ResidualReport> {
    check_pair(y_hat, y)?;
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "residual tolerance must be > 0, got {tolerance}"
        )));
    }
    let residuals: Vec<f64> = y_hat.iter().zip(y).map(|(q, t)| q - t).collect();
    let zeros = residuals.iter().filter(|e| e.abs() <= tolerance).count();
    Ok(ResidualReport {
        zero_fraction: zeros as f64 / residuals.len() as f64,
        residuals,
        tolerance,
    })
}

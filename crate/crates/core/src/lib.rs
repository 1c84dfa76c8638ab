//! # meanfield
//!
//! A small laboratory for the mean-field activation family: a unit is a
//! binary gate whose partition function `Z = 1 + e^{βh}` yields the sigmoid
//! gate probability and the Swish signal `h σ(βh)`, with ReLU and the linear
//! map as the noiseless and noise-dominated limits.
//!
//! ## Modules
//!
//! - [`activation`]: partition function, gate, activations and their derivatives
//! - [`network`]: dense classifier with analytic backprop over weights, biases and β
//! - [`loss`]: cross-entropy, residuals, and likelihood identities behind them
//! - [`hessian`]: finite-difference Hessians, Jacobi eigenvalues, α/γ indices
//! - [`dataset`]: synthetic tasks and the 8×8 digits loader
//! - [`optim`]: full-batch Adam
//! - [`experiment`]: training runs, comparisons, CSV/JSON/SVG outputs
//! - [`verify`]: numerical self-checks used by the `verify` command

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod hessian;
pub mod linalg;
pub mod loss;
pub mod network;
pub mod optim;
pub mod verify;

pub use activation::{ActivationKind, NoiseParam};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use experiment::{RunConfig, RunResult};
pub use hessian::SpectrumReport;
pub use linalg::Matrix;
pub use network::{ForwardCache, Gradients, Network};

//! Dense feed-forward binary classifier with trainable per-layer noise β.
//!
//! Layer `l` maps `a_{l-1}` (batch × n_{l-1}) to pre-activations
//! `h_l = a_{l-1} W_lᵀ + b_l` and activations `a_l = f(h_l; β_l)`. Hidden
//! layers share one [`ActivationKind`]; the output layer is always the
//! β-scaled sigmoid `ŷ = σ(β_L h_L)` with a single unit.
//!
//! Flat parameter ordering (tag [`PARAM_ORDERING`]): for each layer in turn,
//! the weight matrix row-major, then the biases, then β when β is a trainable
//! coordinate of that layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activation::{sigmoid, ActivationKind, NoiseParam};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss;

/// Version tag of the flat parameter layout, stored in checkpoints.
pub const PARAM_ORDERING: &str = "layer-major/weights-row-major,biases,beta/v1";

/// Column sums with magnitude below this cannot be normalized.
const DEGENERATE_COLUMN_SUM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    betas: Vec<NoiseParam>,
    hidden_kind: ActivationKind,
    beta_trainable: bool,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Matrix,
    /// Pre-activations per layer, batch × units.
    pub preacts: Vec<Matrix>,
    /// Activations per layer, batch × units. The last entry holds the outputs.
    pub acts: Vec<Matrix>,
    pub outputs: Vec<f64>,
    /// Frozen ReLU gates the pass was evaluated with, if any.
    pub pattern: Option<ActivationPattern>,
}

/// On/off state of every ReLU unit for every example of a batch.
///
/// Evaluating a ReLU network under a frozen pattern gives the smooth piece of
/// the loss that contains the point where the pattern was recorded. Central
/// differences of that piece's gradient measure curvature without the jumps
/// caused by probes that push a unit across zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPattern {
    /// Per layer; `Some` (batch × units, row-major) for ReLU layers only.
    layers: Vec<Option<Vec<bool>>>,
}

impl ActivationPattern {
    #[inline]
    fn gate(&self, layer: usize, index: usize) -> Option<bool> {
        self.layers[layer].as_ref().map(|m| m[index])
    }

    /// Number of (example, unit) pairs that are switched on.
    pub fn active_count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|m| m.iter().filter(|&&on| on).count())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_weights: Vec<Matrix>,
    pub d_biases: Vec<Vec<f64>>,
    pub d_betas: Vec<f64>,
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least an input and an output layer, got sizes {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::InvalidArgument(format!(
            "the sigmoid output head has exactly one unit, got sizes {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl Network {
    /// Gaussian initialization with standard deviation `1/√fan_in`, zero
    /// biases and every β set to `beta0`. Fully determined by `seed`.
    pub fn init(
        layer_sizes: &[usize],
        hidden_kind: ActivationKind,
        seed: u64,
        beta0: f64,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let beta0 = NoiseParam::new(beta0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt())
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let data = (0..fan_in * fan_out)
                .map(|_| normal.sample(&mut rng))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            betas: vec![beta0; weights.len()],
            weights,
            biases,
            hidden_kind,
            beta_trainable: true,
        })
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(
        layer_sizes: &[usize],
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        betas: Vec<f64>,
        hidden_kind: ActivationKind,
        beta_trainable: bool,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let n_layers = layer_sizes.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers || betas.len() != n_layers {
            return Err(Error::Shape(format!(
                "expected {n_layers} weight matrices, bias vectors and betas, got {}, {}, {}",
                weights.len(),
                biases.len(),
                betas.len()
            )));
        }
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            if weights[l].shape() != (pair[1], pair[0]) {
                return Err(Error::Shape(format!(
                    "layer {l} weights are {:?}, expected {:?}",
                    weights[l].shape(),
                    (pair[1], pair[0])
                )));
            }
            if biases[l].len() != pair[1] {
                return Err(Error::Shape(format!(
                    "layer {l} has {} biases, expected {}",
                    biases[l].len(),
                    pair[1]
                )));
            }
        }
        let betas = betas
            .into_iter()
            .map(NoiseParam::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            betas,
            hidden_kind,
            beta_trainable,
        })
    }

    pub fn with_beta_trainable(mut self, trainable: bool) -> Self {
        self.beta_trainable = trainable;
        self
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of weight layers (hidden layers plus the output layer).
    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_kind(&self) -> ActivationKind {
        self.hidden_kind
    }

    pub fn beta_trainable(&self) -> bool {
        self.beta_trainable
    }

    pub fn weights(&self, layer: usize) -> &Matrix {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn betas(&self) -> &[NoiseParam] {
        &self.betas
    }

    pub fn set_beta(&mut self, layer: usize, beta: NoiseParam) {
        self.betas[layer] = beta;
    }

    /// Activation used by `layer`: the hidden kind, or sigmoid for the last layer.
    pub fn layer_kind(&self, layer: usize) -> ActivationKind {
        if layer + 1 == self.n_layers() {
            ActivationKind::Sigmoid
        } else {
            self.hidden_kind
        }
    }

    /// Whether β of `layer` is a coordinate of the flat parameter vector.
    ///
    /// β is only a parameter where it actually enters the activation, so
    /// ReLU and Linear hidden layers never carry a β coordinate.
    pub fn beta_is_parameter(&self, layer: usize) -> bool {
        self.beta_trainable && self.layer_kind(layer).depends_on_beta()
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| {
                self.weights[l].as_slice().len()
                    + self.biases[l].len()
                    + usize::from(self.beta_is_parameter(l))
            })
            .sum()
    }

    /// Flat indices of the β coordinates, in layer order.
    pub fn beta_indices(&self) -> Vec<usize> {
        let mut idx = Vec::new();
        let mut offset = 0;
        for l in 0..self.n_layers() {
            offset += self.weights[l].as_slice().len() + self.biases[l].len();
            if self.beta_is_parameter(l) {
                idx.push(offset);
                offset += 1;
            }
        }
        idx
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for l in 0..self.n_layers() {
            flat.extend_from_slice(self.weights[l].as_slice());
            flat.extend_from_slice(&self.biases[l]);
            if self.beta_is_parameter(l) {
                flat.push(self.betas[l].get());
            }
        }
        flat
    }

    /// Copy of `self` with parameters taken from `flat`; frozen βs are kept.
    pub fn unflatten_params(&self, flat: &[f64]) -> Result<Network> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "flat parameter vector has length {}, expected {expected}",
                flat.len()
            )));
        }
        let mut net = self.clone();
        let mut offset = 0;
        for l in 0..net.n_layers() {
            let w = net.weights[l].as_mut_slice();
            w.copy_from_slice(&flat[offset..offset + w.len()]);
            offset += w.len();
            let b = &mut net.biases[l];
            let n = b.len();
            b.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
            if net.beta_is_parameter(l) {
                net.betas[l] = NoiseParam::new(flat[offset])?;
                offset += 1;
            }
        }
        Ok(net)
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        self.forward_impl(x, None)
    }

    /// Forward pass with ReLU gates taken from `pattern` instead of the sign
    /// of each pre-activation. Non-ReLU layers are unaffected.
    pub fn forward_with_pattern(
        &self,
        x: &Matrix,
        pattern: &ActivationPattern,
    ) -> Result<ForwardCache> {
        if pattern.layers.len() != self.n_layers() {
            return Err(Error::Shape(
                "activation pattern does not match network depth".into(),
            ));
        }
        for (l, m) in pattern.layers.iter().enumerate() {
            if let Some(m) = m {
                if m.len() != x.rows() * self.layer_sizes[l + 1] {
                    return Err(Error::Shape(format!(
                        "activation pattern for layer {l} does not match the batch"
                    )));
                }
            }
        }
        self.forward_impl(x, Some(pattern))
    }

    /// Records the ReLU gates of the batch at the current parameters.
    pub fn activation_pattern(&self, x: &Matrix) -> Result<ActivationPattern> {
        let cache = self.forward(x)?;
        let layers = (0..self.n_layers())
            .map(|l| {
                (self.layer_kind(l) == ActivationKind::ReLU).then(|| {
                    cache.preacts[l]
                        .as_slice()
                        .iter()
                        .map(|&h| h > 0.0)
                        .collect()
                })
            })
            .collect();
        Ok(ActivationPattern { layers })
    }

    fn forward_impl(
        &self,
        x: &Matrix,
        pattern: Option<&ActivationPattern>,
    ) -> Result<ForwardCache> {
        if x.cols() != self.layer_sizes[0] {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.layer_sizes[0]
            )));
        }
        let batch = x.rows();
        let mut preacts = Vec::with_capacity(self.n_layers());
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let prev = if l == 0 { x } else { &acts[l - 1] };
            let w = &self.weights[l];
            let units = w.rows();
            let mut h = Matrix::zeros(batch, units);
            for mu in 0..batch {
                let a_row = prev.row(mu);
                let h_row = h.row_mut(mu);
                for (i, out) in h_row.iter_mut().enumerate() {
                    let dot: f64 = w.row(i).iter().zip(a_row).map(|(wi, ai)| wi * ai).sum();
                    *out = dot + self.biases[l][i];
                }
            }
            let kind = self.layer_kind(l);
            let beta = self.betas[l].get();
            let mut a = h.clone();
            for (idx, v) in a.as_mut_slice().iter_mut().enumerate() {
                *v = match pattern.and_then(|p| p.gate(l, idx)) {
                    Some(on) => {
                        if on {
                            *v
                        } else {
                            0.0
                        }
                    }
                    None => kind.value(*v, beta),
                };
            }
            preacts.push(h);
            acts.push(a);
        }
        let outputs = acts
            .last()
            .map(|a| a.as_slice().to_vec())
            .unwrap_or_default();
        Ok(ForwardCache {
            input: x.clone(),
            preacts,
            acts,
            outputs,
            pattern: pattern.cloned(),
        })
    }

    /// Gradients of the mean binary cross-entropy over the cached batch.
    pub fn backward(&self, cache: &ForwardCache, y: &[f64]) -> Result<Gradients> {
        let batch = cache.outputs.len();
        if y.len() != batch {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {batch}",
                y.len()
            )));
        }
        if cache.preacts.len() != self.n_layers() {
            return Err(Error::Shape(
                "forward cache does not match network depth".into(),
            ));
        }
        let n_layers = self.n_layers();
        let inv_m = 1.0 / batch as f64;
        let mut d_weights: Vec<Matrix> = self
            .weights
            .iter()
            .map(|w| Matrix::zeros(w.rows(), w.cols()))
            .collect();
        let mut d_biases: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut d_betas = vec![0.0; n_layers];

        // Output layer: for BCE after σ(z), ∂/∂z = ŷ − y exactly; z = β_L h_L.
        let out = n_layers - 1;
        let beta_out = self.betas[out].get();
        let h_out = &cache.preacts[out];
        let mut delta = Matrix::zeros(batch, 1);
        let mut d_beta_out = 0.0;
        for mu in 0..batch {
            let residual = (sigmoid(beta_out * h_out[(mu, 0)]) - y[mu]) * inv_m;
            delta[(mu, 0)] = residual * beta_out;
            d_beta_out += residual * h_out[(mu, 0)];
        }
        if self.beta_is_parameter(out) {
            d_betas[out] = d_beta_out;
        }

        for l in (0..n_layers).rev() {
            let prev = if l == 0 {
                &cache.input
            } else {
                &cache.acts[l - 1]
            };
            let dw = &mut d_weights[l];
            let db = &mut d_biases[l];
            for mu in 0..batch {
                let a_row = prev.row(mu);
                for (i, &d) in delta.row(mu).iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    db[i] += d;
                    for (g, &a) in dw.row_mut(i).iter_mut().zip(a_row) {
                        *g += d * a;
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Propagate into layer l-1: ∂L/∂a_{l-1} = δ_l W_l.
            let w = &self.weights[l];
            let below = l - 1;
            let kind = self.layer_kind(below);
            let beta = self.betas[below].get();
            let h = &cache.preacts[below];
            let units = w.cols();
            let mut next = Matrix::zeros(batch, units);
            let mut d_beta = 0.0;
            for mu in 0..batch {
                let mut grad_a = vec![0.0; units];
                for (i, &d) in delta.row(mu).iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (g, &wij) in grad_a.iter_mut().zip(w.row(i)) {
                        *g += d * wij;
                    }
                }
                let h_row = h.row(mu);
                for (j, (&ga, &hj)) in grad_a.iter().zip(h_row).enumerate() {
                    let gate = cache
                        .pattern
                        .as_ref()
                        .and_then(|p| p.gate(below, mu * units + j));
                    let dh = match gate {
                        Some(on) => f64::from(u8::from(on)),
                        None => kind.grad_h(hj, beta),
                    };
                    next[(mu, j)] = ga * dh;
                    d_beta += ga * kind.grad_beta(hj, beta);
                }
            }
            if self.beta_is_parameter(below) {
                d_betas[below] = d_beta;
            }
            delta = next;
        }

        Ok(Gradients {
            d_weights,
            d_biases,
            d_betas,
        })
    }

    /// Mean binary cross-entropy of the network on `(x, y)`.
    pub fn loss(&self, x: &Matrix, y: &[f64]) -> Result<f64> {
        let cache = self.forward(x)?;
        loss::bce_loss(&cache.outputs, y)
    }

    /// Loss and flat gradient, ordered like [`Network::flatten_params`].
    pub fn loss_and_gradient(&self, x: &Matrix, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward(x)?;
        let loss = loss::bce_loss(&cache.outputs, y)?;
        let grads = self.backward(&cache, y)?;
        Ok((loss, grads.flatten(self)))
    }

    /// Flat gradient under a frozen ReLU pattern (see [`ActivationPattern`]).
    pub fn gradient_with_pattern(
        &self,
        x: &Matrix,
        y: &[f64],
        pattern: &ActivationPattern,
    ) -> Result<Vec<f64>> {
        let cache = self.forward_with_pattern(x, pattern)?;
        Ok(self.backward(&cache, y)?.flatten(self))
    }

    /// Rescales each weight-matrix column to sum to one.
    pub fn column_normalize(&self) -> Result<Network> {
        let mut net = self.clone();
        for (l, w) in net.weights.iter_mut().enumerate() {
            for c in 0..w.cols() {
                let sum: f64 = (0..w.rows()).map(|r| w[(r, c)]).sum();
                if sum.abs() < DEGENERATE_COLUMN_SUM || !sum.is_finite() {
                    return Err(Error::DegenerateColumn {
                        layer: l,
                        column: c,
                        sum,
                    });
                }
                for r in 0..w.rows() {
                    w[(r, c)] /= sum;
                }
            }
        }
        Ok(net)
    }

    /// Fraction of examples where `ŷ ≥ threshold` agrees with the label.
    pub fn predict_accuracy(&self, x: &Matrix, y: &[f64], threshold: f64) -> Result<f64> {
        let cache = self.forward(x)?;
        accuracy(&cache.outputs, y, threshold)
    }
}

/// Thresholded agreement between outputs and binary labels; ties count as class 1.
pub fn accuracy(outputs: &[f64], y: &[f64], threshold: f64) -> Result<f64> {
    if outputs.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} outputs against {} labels",
            outputs.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty batch".into()));
    }
    let hits = outputs
        .iter()
        .zip(y)
        .filter(|(&o, &t)| (o >= threshold) == (t >= 0.5))
        .count();
    Ok(hits as f64 / y.len() as f64)
}

impl Gradients {
    /// Flat vector in the ordering of [`Network::flatten_params`].
    pub fn flatten(&self, net: &Network) -> Vec<f64> {
        let mut flat = Vec::with_capacity(net.param_count());
        for l in 0..net.n_layers() {
            flat.extend_from_slice(self.d_weights[l].as_slice());
            flat.extend_from_slice(&self.d_biases[l]);
            if net.beta_is_parameter(l) {
                flat.push(self.d_betas[l]);
            }
        }
        flat
    }

    pub fn max_abs(&self) -> f64 {
        let w = self
            .d_weights
            .iter()
            .map(Matrix::max_abs)
            .fold(0.0, f64::max);
        let b = self
            .d_biases
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let beta = self.d_betas.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        w.max(b).max(beta)
    }
}

/// Serializable form of a network, used by run checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub ordering: String,
    pub layer_sizes: Vec<usize>,
    pub hidden_kind: ActivationKind,
    pub beta_trainable: bool,
    /// Every layer's β, including frozen ones.
    pub betas: Vec<f64>,
    pub params: Vec<f64>,
}

impl From<&Network> for NetworkSnapshot {
    fn from(net: &Network) -> Self {
        Self {
            ordering: PARAM_ORDERING.to_string(),
            layer_sizes: net.layer_sizes.clone(),
            hidden_kind: net.hidden_kind,
            beta_trainable: net.beta_trainable,
            betas: net.betas.iter().map(|b| b.get()).collect(),
            params: net.flatten_params(),
        }
    }
}

impl TryFrom<&NetworkSnapshot> for Network {
    type Error = Error;

    fn try_from(snap: &NetworkSnapshot) -> Result<Network> {
        if snap.ordering != PARAM_ORDERING {
            return Err(Error::InvalidArgument(format!(
                "unsupported parameter ordering {:?}",
                snap.ordering
            )));
        }
        validate_sizes(&snap.layer_sizes)?;
        let weights = snap
            .layer_sizes
            .windows(2)
            .map(|p| Matrix::zeros(p[1], p[0]))
            .collect();
        let biases = snap.layer_sizes[1..]
            .iter()
            .map(|&n| vec![0.0; n])
            .collect();
        let template = Network::from_parts(
            &snap.layer_sizes,
            weights,
            biases,
            snap.betas.clone(),
            snap.hidden_kind,
            snap.beta_trainable,
        )?;
        template.unflatten_params(&snap.params)
    }
}

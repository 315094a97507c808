//! Small fully-connected network with hand-written backpropagation and an
//! optional batch-normalization stage on the output.
//!
//! The encoder maps a batch `B` (rows = samples) through affine layers
//! `h ← act(h·W + b)`; weights are stored fan_in × fan_out so the forward
//! pass is plain row-major matmul. Batch norm, when present, is applied
//! once, to the final layer's output: feature learning without some output
//! regularization collapses or diverges for the heavy-tailed losses in this
//! crate, and output batch norm is the variant the trainer enforces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::matrix::Matrix;
use crate::numkit::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's *output* y = act(x).
    /// All three activations allow this, which saves caching
    /// pre-activations: relu' = [y > 0], tanh' = 1 − y², identity' = 1.
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer: `out = act(in · weight + bias)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// fan_in × fan_out.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// The full parameter set of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Glorot/Xavier-style initialization: weights uniform in
    /// ±√(6/(fan_in+fan_out)), biases zero. `dims` lists layer widths
    /// input-first, e.g. `[2, 64, 64, 2]`; hidden layers get
    /// `hidden_activation`, the last layer `output_activation`.
    pub fn new_xavier(
        dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut RngState,
    ) -> Result<MlpParams> {
        if dims.len() < 2 {
            return Err(Error::arg(
                "MlpParams::new_xavier",
                "dims",
                "need at least input and output widths",
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::arg("MlpParams::new_xavier", "dims", "zero layer width"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[w], dims[w + 1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weight = Matrix::zeros(fan_in, fan_out);
            for v in weight.data_mut() {
                *v = rng.uniform_in(-a, a);
            }
            layers.push(Layer {
                weight,
                bias: vec![0.0; fan_out],
                activation: if w + 2 == dims.len() {
                    output_activation
                } else {
                    hidden_activation
                },
            });
        }
        Ok(MlpParams { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<MlpParams> {
        let p = MlpParams { layers };
        p.validate()?;
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.cols()
    }

    /// Check layer dimensions chain and every value is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::dim("MlpParams::validate", "no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.weight.cols() {
                return Err(Error::dim(
                    "MlpParams::validate",
                    format!(
                        "layer {}: bias length {} vs weight fan_out {}",
                        i,
                        l.bias.len(),
                        l.weight.cols()
                    ),
                ));
            }
            if i > 0 && self.layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(Error::dim(
                    "MlpParams::validate",
                    format!(
                        "layer {} fan_in {} does not chain from previous fan_out {}",
                        i,
                        l.weight.rows(),
                        self.layers[i - 1].weight.cols()
                    ),
                ));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::non_finite("MlpParams::validate", format!("layer {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    Train,
    Eval,
}

/// Batch normalization over feature dimensions (one scale/offset pair per
/// output column).
///
/// Train mode normalizes with the batch's own mean and *biased* variance
/// and folds them into the running statistics as
/// `running ← (1 − momentum)·running + momentum·batch`.
/// Eval mode normalizes with the running statistics and never mutates them;
/// embeddings for evaluation are always produced in eval mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: BnMode,
}

impl BatchNormState {
    /// Fresh state: γ=1, β=0, running mean 0, running variance 1.
    pub fn new(dim: usize, momentum: f64, epsilon: f64) -> Result<BatchNormState> {
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::arg(
                "BatchNormState::new",
                "momentum",
                format!("{momentum} outside (0, 1]"),
            ));
        }
        if !(epsilon > 0.0) {
            return Err(Error::arg(
                "BatchNormState::new",
                "epsilon",
                format!("{epsilon} must be > 0"),
            ));
        }
        Ok(BatchNormState {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum,
            epsilon,
            mode: BnMode::Train,
        })
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    /// Post-activation output of each layer, in order.
    layer_outputs: Vec<Matrix>,
    bn: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    trained: bool,
    /// Normalized activations x̂ (before γ/β).
    x_hat: Matrix,
    /// 1/√(var + ε) for the statistics actually used.
    inv_std: Vec<f64>,
}

impl ForwardCache {
    /// The final output's shape, for cache/grad cross-checks.
    fn output_shape(&self) -> (usize, usize) {
        let out = self
            .bn
            .as_ref()
            .map(|b| &b.x_hat)
            .unwrap_or_else(|| self.layer_outputs.last().expect("nonempty"));
        (out.rows(), out.cols())
    }
}

/// Run the encoder on a batch (rows = samples). With batch norm in train
/// mode the running statistics are updated as a side effect, which is why
/// `bn` is taken by `&mut`.
pub fn mlp_forward(
    params: &MlpParams,
    mut bn: Option<&mut BatchNormState>,
    batch: &Matrix,
) -> Result<(Matrix, ForwardCache)> {
    if batch.cols() != params.input_dim() {
        return Err(Error::dim(
            "mlp_forward",
            format!("batch has {} columns, encoder expects {}", batch.cols(), params.input_dim()),
        ));
    }
    if batch.rows() == 0 {
        return Err(Error::dim("mlp_forward", "empty batch"));
    }
    if let Some(state) = bn.as_deref() {
        if state.gamma.len() != params.output_dim() {
            return Err(Error::dim(
                "mlp_forward",
                format!(
                    "batch norm is {}-dimensional, encoder output is {}",
                    state.gamma.len(),
                    params.output_dim()
                ),
            ));
        }
        if state.mode == BnMode::Train && batch.rows() < 2 {
            return Err(Error::arg(
                "mlp_forward",
                "batch",
                "batch norm in train mode needs at least 2 samples",
            ));
        }
    }

    let mut layer_outputs = Vec::with_capacity(params.layers.len());
    let mut h = batch.clone();
    for layer in &params.layers {
        let mut pre = h.matmul(&layer.weight)?;
        for i in 0..pre.rows() {
            for (v, &b) in pre.row_mut(i).iter_mut().zip(&layer.bias) {
                *v = layer.activation.apply(*v + b);
            }
        }
        h = pre;
        layer_outputs.push(h.clone());
    }

    let bn_cache = match bn.as_deref_mut() {
        None => None,
        Some(state) => {
            let (mean, var) = match state.mode {
                BnMode::Train => {
                    let mean = h.col_mean();
                    let var = h.col_var_biased(&mean);
                    let m = state.momentum;
                    for j in 0..mean.len() {
                        state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mean[j];
                        state.running_var[j] = (1.0 - m) * state.running_var[j] + m * var[j];
                    }
                    (mean, var)
                }
                BnMode::Eval => (state.running_mean.clone(), state.running_var.clone()),
            };
            let inv_std: Vec<f64> =
                var.iter().map(|&v| 1.0 / (v + state.epsilon).sqrt()).collect();
            let mut x_hat = Matrix::zeros(h.rows(), h.cols());
            for i in 0..h.rows() {
                for j in 0..h.cols() {
                    x_hat.set(i, j, (h.get(i, j) - mean[j]) * inv_std[j]);
                }
            }
            let mut y = Matrix::zeros(h.rows(), h.cols());
            for i in 0..h.rows() {
                for j in 0..h.cols() {
                    y.set(i, j, state.gamma[j] * x_hat.get(i, j) + state.beta[j]);
                }
            }
            let trained = state.mode == BnMode::Train;
            let cache = BnCache { trained, x_hat, inv_std };
            h = y;
            Some(cache)
        }
    };

    let cache = ForwardCache {
        input: batch.clone(),
        layer_outputs,
        bn: bn_cache,
    };
    Ok((h, cache))
}

/// Gradients for every trainable tensor, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    /// Per layer: (weight gradient, bias gradient).
    pub layers: Vec<(Matrix, Vec<f64>)>,
    pub bn_gamma: Option<Vec<f64>>,
    pub bn_beta: Option<Vec<f64>>,
}

impl MlpGrads {
    /// Flat views in the canonical order (per layer weight then bias, then
    /// γ, β) — pairs up with [`param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for (w, b) in &self.layers {
            v.push(w.data());
            v.push(b.as_slice());
        }
        if let Some(g) = &self.bn_gamma {
            v.push(g.as_slice());
        }
        if let Some(b) = &self.bn_beta {
            v.push(b.as_slice());
        }
        v
    }
}

/// Mutable flat views over all trainable tensors, in the same canonical
/// order as [`MlpGrads::slices`]. The optimizer walks these pairwise.
pub fn param_slices_mut<'a>(
    params: &'a mut MlpParams,
    bn: Option<&'a mut BatchNormState>,
) -> Vec<&'a mut [f64]> {
    let mut v = Vec::new();
    for layer in &mut params.layers {
        v.push(layer.weight.data_mut());
        v.push(layer.bias.as_mut_slice());
    }
    if let Some(state) = bn {
        v.push(state.gamma.as_mut_slice());
        v.push(state.beta.as_mut_slice());
    }
    v
}

/// Tensor lengths in canonical order, for sizing optimizer buffers.
pub fn param_lens(params: &MlpParams, bn: Option<&BatchNormState>) -> Vec<usize> {
    let mut v = Vec::new();
    for layer in &params.layers {
        v.push(layer.weight.rows() * layer.weight.cols());
        v.push(layer.bias.len());
    }
    if let Some(state) = bn {
        v.push(state.gamma.len());
        v.push(state.beta.len());
    }
    v
}

/// Backpropagate `grad_output` = ∂L/∂(encoder output) through the cached
/// forward pass. Returns gradients of the scalar L = ⟨grad_output, output⟩
/// with respect to every parameter and to the batch itself.
pub fn mlp_backward(
    params: &MlpParams,
    bn: Option<&BatchNormState>,
    cache: &ForwardCache,
    grad_output: &Matrix,
) -> Result<(MlpGrads, Matrix)> {
    if cache.layer_outputs.len() != params.layers.len() || bn.is_some() != cache.bn.is_some() {
        return Err(Error::arg(
            "mlp_backward",
            "cache",
            "cache does not match this parameter set",
        ));
    }
    let (out_rows, out_cols) = cache.output_shape();
    if grad_output.rows() != out_rows || grad_output.cols() != out_cols {
        return Err(Error::dim(
            "mlp_backward",
            format!(
                "grad_output is {}x{}, forward output was {}x{}",
                grad_output.rows(),
                grad_output.cols(),
                out_rows,
                out_cols
            ),
        ));
    }

    let b = out_rows as f64;
    let mut grad = grad_output.clone();
    let (bn_gamma, bn_beta) = if let (Some(state), Some(bnc)) = (bn, &cache.bn) {
        let dim = state.gamma.len();
        let mut dgamma = vec![0.0; dim];
        let mut dbeta = vec![0.0; dim];
        for i in 0..grad.rows() {
            for j in 0..dim {
                dgamma[j] += grad.get(i, j) * bnc.x_hat.get(i, j);
                dbeta[j] += grad.get(i, j);
            }
        }
        let mut dx = Matrix::zeros(grad.rows(), dim);
        if bnc.trained {
            // Batch statistics depend on x, so the gradient couples the
            // whole column: with dx̂ = γ·dy,
            //   dx = inv_std/b · (b·dx̂ − Σ dx̂ − x̂ · Σ dx̂·x̂).
            for j in 0..dim {
                let mut sum_dxhat = 0.0;
                let mut sum_dxhat_xhat = 0.0;
                for i in 0..grad.rows() {
                    let dxh = grad.get(i, j) * state.gamma[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * bnc.x_hat.get(i, j);
                }
                for i in 0..grad.rows() {
                    let dxh = grad.get(i, j) * state.gamma[j];
                    let v = bnc.inv_std[j] / b
                        * (b * dxh - sum_dxhat - bnc.x_hat.get(i, j) * sum_dxhat_xhat);
                    dx.set(i, j, v);
                }
            }
        } else {
            // Eval mode: running statistics are constants.
            for i in 0..grad.rows() {
                for j in 0..dim {
                    dx.set(i, j, grad.get(i, j) * state.gamma[j] * bnc.inv_std[j]);
                }
            }
        }
        grad = dx;
        (Some(dgamma), Some(dbeta))
    } else {
        (None, None)
    };

    let mut layer_grads: Vec<(Matrix, Vec<f64>)> = Vec::with_capacity(params.layers.len());
    for (idx, layer) in params.layers.iter().enumerate().rev() {
        let out = &cache.layer_outputs[idx];
        // Through the activation: d_pre = d_post ⊙ act'(out).
        let mut d_pre = grad;
        for i in 0..d_pre.rows() {
            for (g, &y) in d_pre.row_mut(i).iter_mut().zip(out.row(i)) {
                *g *= layer.activation.deriv_from_output(y);
            }
        }
        let layer_in = if idx == 0 {
            &cache.input
        } else {
            &cache.layer_outputs[idx - 1]
        };
        let dw = layer_in.transpose().matmul(&d_pre)?;
        let mut db = vec![0.0; layer.bias.len()];
        for i in 0..d_pre.rows() {
            for (g, &v) in db.iter_mut().zip(d_pre.row(i)) {
                *g += v;
            }
        }
        grad = d_pre.matmul(&layer.weight.transpose())?;
        layer_grads.push((dw, db));
    }
    layer_grads.reverse();

    Ok((
        MlpGrads {
            layers: layer_grads,
            bn_gamma,
            bn_beta,
        },
        grad,
    ))
}

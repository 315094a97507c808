//! First-order optimizers over flat parameter views.
//!
//! The optimizer is agnostic to network structure: it walks a list of
//! mutable parameter slices and matching gradient slices (the canonical
//! order produced by `param_slices_mut` / `MlpGrads::slices`) and keeps its
//! moment buffers in the same layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptKind {
    /// Heavy-ball momentum: v ← μ·v + g, p ← p − lr·v.
    SgdMomentum { momentum: f64 },
    /// Adam with the usual bias-corrected moment estimates.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptKind {
    /// Plain SGD (zero momentum).
    pub fn sgd() -> OptKind {
        OptKind::SgdMomentum { momentum: 0.0 }
    }

    /// Adam at its customary defaults β₁=0.9, β₂=0.999, ε=1e-8.
    pub fn adam() -> OptKind {
        OptKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptKind,
    pub lr: f64,
    /// L2 coefficient added to gradients as g ← g + weight_decay·p before
    /// any momentum accounting. Off (0) by default.
    pub weight_decay: f64,
    pub step_count: u64,
    /// First-moment (momentum) buffers, one per parameter tensor.
    m: Vec<Vec<f64>>,
    /// Second-moment buffers (Adam only; empty for SGD).
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// `tensor_lens` fixes the buffer layout; it must match the slices later
    /// passed to [`OptimizerState::step`].
    pub fn new(kind: OptKind, lr: f64, weight_decay: f64, tensor_lens: &[usize]) -> Result<OptimizerState> {
        // lr = 0 is a legal no-op (useful for dry runs).
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::arg("OptimizerState::new", "lr", format!("{lr} must be ≥ 0")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::arg(
                "OptimizerState::new",
                "weight_decay",
                format!("{weight_decay} must be ≥ 0"),
            ));
        }
        let m = tensor_lens.iter().map(|&l| vec![0.0; l]).collect();
        let v = match kind {
            OptKind::SgdMomentum { .. } => Vec::new(),
            OptKind::Adam { .. } => tensor_lens.iter().map(|&l| vec![0.0; l]).collect(),
        };
        Ok(OptimizerState {
            kind,
            lr,
            weight_decay,
            step_count: 0,
            m,
            v,
        })
    }

    /// Apply one update. `params` and `grads` must both follow the layout
    /// given at construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(
                "OptimizerState::step",
                format!(
                    "optimizer tracks {} tensors, got {} params / {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (t, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
            if p.len() != self.m[t].len() || g.len() != self.m[t].len() {
                return Err(Error::dim(
                    "OptimizerState::step",
                    format!("tensor {} length mismatch", t),
                ));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::non_finite(
                    "OptimizerState::step",
                    format!("gradient tensor {}", t),
                ));
            }
        }

        self.step_count += 1;
        match self.kind {
            OptKind::SgdMomentum { momentum } => {
                for t in 0..params.len() {
                    let m = &mut self.m[t];
                    for i in 0..m.len() {
                        let g = grads[t][i] + self.weight_decay * params[t][i];
                        m[i] = momentum * m[i] + g;
                        params[t][i] -= self.lr * m[i];
                    }
                }
            }
            OptKind::Adam { beta1, beta2, epsilon } => {
                let t_step = self.step_count as i32;
                let bc1 = 1.0 - beta1.powi(t_step);
                let bc2 = 1.0 - beta2.powi(t_step);
                for t in 0..params.len() {
                    for i in 0..self.m[t].len() {
                        let g = grads[t][i] + self.weight_decay * params[t][i];
                        self.m[t][i] = beta1 * self.m[t][i] + (1.0 - beta1) * g;
                        self.v[t][i] = beta2 * self.v[t][i] + (1.0 - beta2) * g * g;
                        let m_hat = self.m[t][i] / bc1;
                        let v_hat = self.v[t][i] / bc2;
                        params[t][i] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

//! Deterministic numeric building blocks: dense matrices, a seeded PRNG,
//! a small MLP with hand-written backpropagation, batch normalization, and
//! first-order optimizers.

mod fdiff;
mod matrix;
mod mlp;
mod optim;
mod rng;

pub use fdiff::finite_diff_grad;
pub use matrix::{dot, norm2, sq_dist, Matrix};
pub use mlp::{
    mlp_backward, mlp_forward, param_lens, param_slices_mut, Activation, BatchNormState, BnMode,
    ForwardCache, Layer, MlpGrads, MlpParams,
};
pub use optim::{OptKind, OptimizerState};
pub use rng::RngState;

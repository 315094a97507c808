//! Contrastive representation learning as stochastic neighbor embedding.
//!
//! The crate is organized around the two-step view of neighbor embedding:
//! build a pairwise-similarity matrix `P` over the inputs, then fit features
//! whose similarity matrix `Q` matches it. Contrastive objectives (InfoNCE
//! and its weighted, unnormalized, and t-distribution variants) are exposed
//! both as losses over positive-pair batches and through the KL matching
//! machinery that connects them to classic SNE.
//!
//! Modules:
//!
//! - [`numkit`]: dense row-major matrices, a seeded splitmix64 PRNG, a small
//!   MLP with hand-written backprop, batch normalization, and first-order
//!   optimizers.
//! - [`simdata`]: Gaussian-mixture data generation, positive-pair
//!   augmentations, mean shift, and synthetic crop boxes with IoU.
//! - [`similarity`]: every input-space `P` and feature-space `Q`
//!   construction used by the losses and oracles.
//! - [`losses`]: training objectives and their analytic gradients.
//! - [`embedopt`]: nonparametric embedding optimization and closed-form
//!   maximal-separation references (polygon, simplex).
//! - [`trainer`]: parametric encoder training loops and checkpoints.
//! - [`evaltheory`]: KNN / linear-probe evaluation, alignment and uniformity
//!   metrics, and brute-force numerical oracles for the identities the
//!   losses are built on.
//! - [`csvio`]: the CSV interchange formats shared with the CLI.

pub mod csvio;
pub mod embedopt;
pub mod error;
pub mod evaltheory;
pub mod losses;
pub mod numkit;
pub mod simdata;
pub mod similarity;
pub mod trainer;

pub use error::{Error, Result};
pub use numkit::{Matrix, RngState};

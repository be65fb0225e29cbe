//! Federated fine-tuning with zero-order optimization and split perturbations.
//!
//! Clients train with forward passes only: every update direction is a
//! Gaussian vector regenerated from a seed, so a client uploads a handful of
//! scalars per step and the server rebuilds the exact client model by replaying
//! those seeds. The model is cut into two blocks; the small second block is
//! perturbed many times per perturbation of the first, reusing the cached cut
//! activation.
//!
//! Modules, bottom-up:
//! - [`perturb`]: pinned Gaussian streams and in-place perturb/update passes.
//! - [`model`]: MLP classifiers with a cut layer, backprop oracle, checkpoints.
//! - [`zo`]: central/forward-difference and split-perturbation estimators.
//! - [`protocol`]: client training, payload codec, reconstruction, rounds.
//! - [`cost`]: FLOP, byte and peak-memory accounting.
//! - [`data`]: blobs, CSV loading, splits and client partitioning.
//! - [`harness`]: configuration, experiment runner, metrics and reports.

pub mod cost;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod perturb;
pub mod protocol;
pub mod scalar;
pub mod zo;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

//! Positive-unlabeled (PU) learning with a vector-quantized encoder.
//!
//! The pipeline trains an encoder so that unlabeled data falls into two
//! clusters in a quantized representation space, clusters the unlabeled set
//! with 2-means, and names the cluster closest to the labeled positives as
//! the positive class. Training stops when the distance between the two
//! cluster centers stops growing.
//!
//! Modules:
//! - [`data`]: PU datasets, synthetic generators, IDX loading, CSV storage.
//! - [`encoder`]: a small differentiable encoder with explicit backward pass and Adam.
//! - [`codebook`]: the codebook, nearest-code quantization and anchor tracking.
//! - [`loss`]: the disentangling objectives and their ablation variants.
//! - [`train`]: the training loop with centroid-distance early stopping.
//! - [`cluster`] and [`classify`]: 2-means and the PU classifier built on it.
//! - [`ntk`]: numerical checks of linearized gradient-descent dynamics.

pub mod classify;
pub mod cluster;
pub mod codebook;
pub mod data;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod loss;
pub mod model;
pub mod ntk;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use exec::Parallelism;

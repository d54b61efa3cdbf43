//! A small differentiable encoder `R^d -> R^{K x p}`.
//!
//! Dense and 2-D convolution layers with ReLU between them, an explicit
//! reverse pass over a recorded [`Tape`], and an [`Adam`] optimizer. All
//! arithmetic is `f64`.

mod adam;
mod layers;
mod model;

pub use adam::{Adam, AdamConfig};
pub use layers::{Layer, LayerSpec};
pub use model::{Architecture, Encoder, Gradient, InitConfig, InputNorm, LayerGrad, Tape};

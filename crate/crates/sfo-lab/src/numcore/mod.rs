//! Minimal dense numeric kernel: row-major matrices, feed-forward MLPs with
//! exact reverse-mode parameter gradients, an Adam optimizer, and a
//! counter-based splittable RNG. Everything is `f64` and deterministic given
//! a seed.

mod adam;
mod matrix;
mod mlp;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::Matrix;
pub use mlp::{mlp_backward, mlp_forward, Activation, Layer, MlpSpec, ParamSet};
pub use rng::RngStream;

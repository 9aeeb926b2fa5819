//! Minimal reverse-mode differentiation: tensors, a recording graph,
//! convolution kernels and the Adam optimizer.

mod adam;
pub mod conv;
mod graph;
mod params;

pub use adam::AdamState;
pub use graph::{round_latent, Binder, subsample2, upsample2, CustomOp, Gradients, Graph, Var, LATENT_MAX, LATENT_MIN};
pub use params::{GradStore, ParamId, ParamStore};

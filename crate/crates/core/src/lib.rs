//! Learned image codec built around a multi-scale progressive (MSP)
//! probability model.
//!
//! The latent of an analysis transform is split into scale groups,
//! subgroups and channel groups. Each group is decoded in one parallel step
//! conditioned on everything decoded before it, so the number of decoder
//! model evaluations depends only on the profile, never on image size.

// Index loops mirror the math in numeric kernels, and `!(x > 0.0)` is
// used on purpose so NaN fails validation.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod autodiff;
pub mod codec;
pub mod entropy;
mod error;
pub mod io;
pub mod model;
pub mod msp;
pub mod tensor;
pub mod train;
pub mod transforms;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use msp::MspProfile;
pub use tensor::Tensor;

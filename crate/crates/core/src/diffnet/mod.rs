//! A small reverse-mode differentiation core: f64 tensors, the layer set
//! `specmodel` needs, losses, Adam and a finite-difference
//! gradient checker.

mod adam;
mod gradcheck;
pub mod layers;
mod loss;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use gradcheck::{grad_check, FD_STEP};
pub use layers::*;
pub use loss::{bce, bce_backward, kl_gaussian, kl_gaussian_backward, BCE_CLAMP};
pub use params::{Param, ParamStore, DTYPE_TAG, MAGIC};
pub use tensor::Tensor;

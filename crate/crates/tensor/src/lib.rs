//! Minimal differentiable tensor engine for the cross-resolution synthesis
//! pipeline: dense 2-D convolution, bilinear sampling, unfold/fold patch
//! machinery, elementwise nonlinearities, reverse-mode gradients on a
//! single-writer tape, and an Adam optimizer step.
//!
//! All pipeline arithmetic runs in `f32`. The engine is generic over the
//! element type so gradient verification can instantiate the exact same
//! kernels in `f64`, where central differences are not noise-limited.

mod adam;
mod error;
mod gradcheck;
mod kernels;
mod ops;
mod scalar;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use error::TensorError;
pub use gradcheck::{grad_check, grad_check_sampled};
pub use kernels::conv2d_out_dim;
pub use ops::{bilinear_sample, conv2d, conv2d_padded, fold, residual_block, unfold};
pub use scalar::Real;
pub use tape::{BackArgs, BackFn, Gradients, Tape, Val};
pub use tensor::{ConvParams, PadMode, Tensor};

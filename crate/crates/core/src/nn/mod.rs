//! CPU kernels and the U-Net itself.
//!
//! Everything here is single-threaded f32 with explicit forward/backward
//! passes, so training is bit-reproducible. Feature maps are (C, H, W)
//! per image; convolutions run as im2col + sgemm.

mod loss;
mod ops;
mod sgd;
mod unet;

pub use loss::{softmax_2class, LossHead, TargetSpec};
pub use sgd::Sgd;
pub use unet::{GradBuf, UNet, UNetCache};

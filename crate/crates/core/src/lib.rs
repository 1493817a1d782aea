//! Operators for single-image stereoscopic view synthesis with t-shaped
//! adaptive-dilation kernels.
//!
//! The crate is organised by stage:
//!
//! * [`field`] and [`sample`]: the dense grid type and its clamped samplers.
//! * [`tkernel`]: the t-shaped convolution, its dilation schedule and gradients.
//! * [`geometry`]: disparity and occlusion read out of kernel fields.
//! * [`srstack`]: the shifted-downscaled stack and the super-resolution composition.
//! * [`metrics`]: reconstruction losses and evaluation metrics.
//! * [`toy`]: synthetic layered scenes and a per-pixel kernel optimizer.
//! * [`gradcheck`]: finite-difference verification of the analytic gradients.
//! * [`png`]: 8-bit PNG conversion.

pub mod error;
pub mod field;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod png;
pub mod sample;
pub mod srstack;
pub mod tkernel;
pub mod toy;

pub use error::{Error, Result};
pub use field::{Field, ImageField, Scalar, Shape};
pub use tkernel::{
    blend_backward, blend_backward_params, blend_forward, dilation_schedule, tconv_backward,
    tconv_forward, BlendField, BlendGradients, DilationRule, KernelLayout, PanSpec, TKernelField,
};

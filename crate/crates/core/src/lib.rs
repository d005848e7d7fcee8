//! Crop segmentation for overhead imagery.
//!
//! A U-Net whose encoder stages can carry squeeze-and-excitation gates, built
//! on a small hand-written tensor library with explicit backward passes. The
//! crate also covers polygon ground truth, scene tiling, augmentation, soft
//! Dice evaluation and a deterministic training loop.
//!
//! Module map:
//! - [`tensor`]: dense arrays and differentiable primitives
//! - [`nn`]: layers and composite blocks (conv block, residual, SE)
//! - [`model`]: architecture names, the U-Net graph, checkpoints
//! - [`metrics`]: soft/hard Dice, pixel accuracy
//! - [`data`]: rasterization, tiling, augmentation, synthetic scenes
//! - [`train`]: optimizers, training loop, gradient checking

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{UNet, UNetConfig};
pub use tensor::{Mode, Scalar, Shape, Tensor};

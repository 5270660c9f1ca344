//! Spatial-transformer object detection toolkit.
//!
//! The crate bundles everything needed to train and probe a miniature
//! warp-equivariant detector on a CPU:
//!
//! - [`tensor`] — dense f64 tensors with reverse-mode autodiff, conv/pool
//!   primitives and an AdamW optimizer.
//! - [`stn`] — the spatial transformer: localization network, affine grid
//!   generator and differentiable bilinear sampler placed ahead of the
//!   detector.
//! - [`detector`] — strided feature-pyramid backbone, prediction head,
//!   target assignment, CIoU/distribution-focal losses, decoding and NMS.
//! - [`metrics`] — greedy matching, precision/recall and interpolated
//!   average precision.
//! - [`augment`] — test-time rotation/shear/crop transforms applied
//!   consistently to images and boxes.
//! - [`data`] — YOLO-format labels, multispectral band fusion, dataset
//!   loading and a synthetic dataset generator.
//! - [`explain`] — activation heatmaps from the first principal component
//!   of a feature map, with image overlays.
//! - [`train`] — the training/evaluation harness behind the CLI.

pub mod affine;
pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod detector;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod stn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Underwater image restoration toolkit.
//!
//! Water attenuates and scatters light wavelength-dependently, so underwater
//! photographs arrive colour-shifted and veiled. This crate restores them
//! ("dewatering") with a pair of convolutional generators trained
//! adversarially: one predicts the clean scene, the other the physical
//! degradation (transmission and veiling light), and a recomposition loss ties
//! the two together through the formation model.
//!
//! The major pieces:
//!
//! - [`uifm`] — the image formation model: composition, transmission from
//!   depth, radiative transfer, and the closed-form estimators that
//!   manufacture supervision targets.
//! - [`metrics`] — restoration quality measures (per-channel RMS distance,
//!   PSNR, SSIM, UIQM) and report generation.
//! - [`nn`] — a small deterministic CPU tensor library (conv / deconv /
//!   batch-norm / activations with hand-written backward passes) plus the
//!   U-Net generators and the patch discriminator built from it.
//! - [`train`] — losses, Adam, the alternating D/G training loop,
//!   checkpointing and inference.
//! - [`dataset`] — paired-image discovery, augmentation, target
//!   precomputation, splitting, batching and the on-disk sample cache.
//! - [`config`] / [`commands`] — run configuration and the library entry
//!   points behind each CLI subcommand.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod image;
pub mod imageio;
pub mod metrics;
pub mod nn;
pub mod train;
pub mod uifm;

pub use error::{Error, Result};
pub use image::{
    ClampStats, DepthMap, ImageTensor, TransmissionMap, VeilingLightField, DENOM_EPS, T_FLOOR,
};

//! GAN training engine: losses, optimizer, the alternating step, snapshots
//! and the finite-difference gradient audit.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod losses;
pub mod trainer;

pub use adam::{AdamParams, AdamState};
pub use gradcheck::{
    run_gradcheck, run_gradcheck_scan, GradCheckConfig, GradCheckReport, NetworkCheck,
};
pub use trainer::{
    derive_seed, epoch_order, ArchConfig, BatchSource, EpochStats, LossBreakdown, TrainBatch,
    TrainHistory, TrainOptions, Trainer,
};

use ndarray::{Array4, ArrayView4};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::ops::c;
use crate::nn::Scalar;

/// `(H, W, 3)` image to a single-item NCHW batch.
pub fn image_to_nchw<F: Scalar>(img: &ImageTensor) -> Array4<F> {
    let (h, w) = (img.height(), img.width());
    let data = img.data();
    Array4::from_shape_fn((1, 3, h, w), |(_, ch, y, x)| c::<F>(data[[y, x, ch]]))
}

/// Single-item NCHW batch back to an image. Values are clamped to `[0, 1]`
/// to absorb float fuzz from the network heads.
pub fn nchw_to_image<F: Scalar>(x: ArrayView4<F>) -> Result<ImageTensor> {
    let (n, ch, h, w) = x.dim();
    if n != 1 || ch != 3 {
        return Err(Error::invalid(format!(
            "expected a (1,3,H,W) batch, got ({n},{ch},{h},{w})"
        )));
    }
    let mut data = ndarray::Array3::<f64>::zeros((h, w, 3));
    for c in 0..3 {
        for y in 0..h {
            for xx in 0..w {
                data[[y, xx, c]] = x[[0, c, y, xx]].to_f64().unwrap().clamp(0.0, 1.0);
            }
        }
    }
    Ok(ImageTensor::from_clamped(data))
}

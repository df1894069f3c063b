//! Restoration quality metrics and report aggregation.
//!
//! Four measures: per-channel Euclidean (RMS) distance, PSNR, SSIM and the
//! no-reference UIQM. The first three need a ground-truth reference; UIQM
//! scores a lone image. [`build_report`] evaluates a batch and aggregates.

mod report;
mod ssim;
mod uiqm;

pub use report::{build_report, MetricRow, MetricsReport, ReportEntry};
pub use ssim::ssim;
pub use uiqm::uiqm;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Reported PSNR for a zero-error pair; also the upper clamp, so reports
/// never carry infinities.
pub const PSNR_CAP: f64 = 100.0;

fn check_pair(pred: &ImageTensor, reference: &ImageTensor) -> Result<()> {
    if pred.data().shape() != reference.data().shape() {
        return Err(Error::ShapeMismatch {
            context: "metric pred/ref",
            left: pred.data().shape().to_vec(),
            right: reference.data().shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-channel root-mean-square distance between two images.
///
/// `ed_c = ||pred_c - ref_c||_2 / sqrt(n)` over the `n` pixels of channel
/// `c`; the fourth component is the mean of the three channel distances.
pub fn euclidean_distance(
    pred: &ImageTensor,
    reference: &ImageTensor,
) -> Result<(f64, f64, f64, f64)> {
    check_pair(pred, reference)?;
    let n = (pred.height() * pred.width()) as f64;
    let mut sums = [0.0f64; 3];
    for (((_, _, c), &p), &r) in pred
        .data()
        .indexed_iter()
        .zip(reference.data().iter())
    {
        let d = p - r;
        sums[c] += d * d;
    }
    let ed = [
        (sums[0] / n).sqrt(),
        (sums[1] / n).sqrt(),
        (sums[2] / n).sqrt(),
    ];
    Ok((ed[0], ed[1], ed[2], (ed[0] + ed[1] + ed[2]) / 3.0))
}

/// Peak signal-to-noise ratio in decibels, peak 1.0.
///
/// `10 * log10(1 / MSE)` over all pixels and channels; a zero-MSE pair (and
/// anything above the cap) reports [`PSNR_CAP`].
pub fn psnr(pred: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    check_pair(pred, reference)?;
    let n = pred.data().len() as f64;
    let mse: f64 = pred
        .data()
        .iter()
        .zip(reference.data().iter())
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        Ok(PSNR_CAP)
    } else {
        Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut StdRng, h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(Array3::from_shape_fn((h, w, 3), |_| {
            rng.random_range(0.0..=1.0)
        }))
        .unwrap()
    }

    #[test]
    fn ed_zero_for_identical() {
        let a = ImageTensor::constant(4, 4, [0.3, 0.6, 0.9]).unwrap();
        assert_eq!(euclidean_distance(&a, &a).unwrap(), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn ed_one_for_full_swing() {
        let white = ImageTensor::constant(4, 4, [1.0; 3]).unwrap();
        let black = ImageTensor::constant(4, 4, [0.0; 3]).unwrap();
        let (r, g, b, avg) = euclidean_distance(&white, &black).unwrap();
        assert_eq!((r, g, b, avg), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn ed_symmetric() {
        let mut rng = StdRng::seed_from_u64(21);
        let a = random_image(&mut rng, 5, 7);
        let b = random_image(&mut rng, 5, 7);
        assert_eq!(
            euclidean_distance(&a, &b).unwrap(),
            euclidean_distance(&b, &a).unwrap()
        );
    }

    #[test]
    fn ed_triangle_inequality_per_channel() {
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..20 {
            let a = random_image(&mut rng, 6, 6);
            let b = random_image(&mut rng, 6, 6);
            let c = random_image(&mut rng, 6, 6);
            let ab = euclidean_distance(&a, &b).unwrap();
            let bc = euclidean_distance(&b, &c).unwrap();
            let ac = euclidean_distance(&a, &c).unwrap();
            for ((ab_c, bc_c), ac_c) in [ab.0, ab.1, ab.2]
                .iter()
                .zip([bc.0, bc.1, bc.2])
                .zip([ac.0, ac.1, ac.2])
            {
                assert!(ac_c <= ab_c + bc_c + 1e-12);
            }
        }
    }

    #[test]
    fn psnr_capped_for_identical() {
        let a = ImageTensor::constant(3, 3, [0.2; 3]).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_twenty_db_for_centiunit_mse() {
        // Constant difference of 0.1 everywhere -> MSE 0.01 -> 20 dB.
        let a = ImageTensor::constant(4, 4, [0.5; 3]).unwrap();
        let b = ImageTensor::constant(4, 4, [0.6; 3]).unwrap();
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        // Monotone in expectation: average several draws per amplitude.
        let base = ImageTensor::constant(16, 16, [0.5; 3]).unwrap();
        let mut rng = StdRng::seed_from_u64(23);
        let mut prev = f64::INFINITY;
        for k in 1..=20 {
            let amp = k as f64 * 0.01;
            let mut mean = 0.0;
            for _ in 0..5 {
                let noisy = ImageTensor::new(Array3::from_shape_fn((16, 16, 3), |_| {
                    (0.5 + rng.random_range(-amp..=amp)).clamp(0.0, 1.0)
                }))
                .unwrap();
                mean += psnr(&base, &noisy).unwrap();
            }
            mean /= 5.0;
            assert!(
                mean < prev,
                "psnr should drop with noise amplitude: {mean} !< {prev}"
            );
            prev = mean;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = ImageTensor::constant(4, 4, [0.5; 3]).unwrap();
        let b = ImageTensor::constant(4, 5, [0.5; 3]).unwrap();
        assert!(euclidean_distance(&a, &b).is_err());
        assert!(psnr(&a, &b).is_err());
    }
}

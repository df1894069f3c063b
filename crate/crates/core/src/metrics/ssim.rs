//! Structural similarity with the standard 11x11 Gaussian window.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Dynamic range of the inputs ([0, 1] images).
const L: f64 = 1.0;

/// Normalized 1D Gaussian taps; the separable outer product sums to 1.
fn gaussian_taps() -> [f64; WIN] {
    let mut taps = [0.0; WIN];
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - (WIN as f64 - 1.0) / 2.0;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *t;
    }
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Separable valid-mode Gaussian blur: (H, W) -> (H-10, W-10).
fn blur_valid(plane: &Array2<f64>, taps: &[f64; WIN]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let mut vertical = Array2::zeros((h - WIN + 1, w));
    for y in 0..h - WIN + 1 {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * plane[(y + k, x)];
            }
            vertical[(y, x)] = acc;
        }
    }
    let mut out = Array2::zeros((h - WIN + 1, w - WIN + 1));
    for y in 0..h - WIN + 1 {
        for x in 0..w - WIN + 1 {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * vertical[(y, x + k)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// Mean structural similarity between two images.
///
/// Gaussian-weighted local means, biased variances and covariance over every
/// fully interior 11x11 window; per-channel scores averaged across R, G, B.
/// Both dimensions must be at least 11.
pub fn ssim(pred: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    if pred.data().shape() != reference.data().shape() {
        return Err(Error::ShapeMismatch {
            context: "ssim pred/ref",
            left: pred.data().shape().to_vec(),
            right: reference.data().shape().to_vec(),
        });
    }
    if pred.height() < WIN || pred.width() < WIN {
        return Err(Error::invalid(format!(
            "ssim needs at least {WIN}x{WIN}, got {}x{}",
            pred.height(),
            pred.width()
        )));
    }
    let taps = gaussian_taps();
    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);

    let mut total = 0.0;
    for c in 0..3 {
        let x = pred.data().index_axis(Axis(2), c).to_owned();
        let y = reference.data().index_axis(Axis(2), c).to_owned();
        let mu_x = blur_valid(&x, &taps);
        let mu_y = blur_valid(&y, &taps);
        let xx = blur_valid(&(&x * &x), &taps);
        let yy = blur_valid(&(&y * &y), &taps);
        let xy = blur_valid(&(&x * &y), &taps);

        let mut sum = 0.0;
        for ((i, j), &mx) in mu_x.indexed_iter() {
            let my = mu_y[(i, j)];
            let var_x = xx[(i, j)] - mx * mx;
            let var_y = yy[(i, j)] - my * my;
            let cov = xy[(i, j)] - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
            sum += num / den;
        }
        total += sum / mu_x.len() as f64;
    }
    Ok(total / 3.0)
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
    fn self_similarity_is_one() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..5 {
            let a = random_image(&mut rng, 16, 13);
            assert_abs_diff_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_constants_score_one() {
        let a = ImageTensor::constant(12, 12, [0.5; 3]).unwrap();
        let b = ImageTensor::constant(12, 12, [0.5; 3]).unwrap();
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bounded_by_one_in_magnitude() {
        let mut rng = StdRng::seed_from_u64(32);
        for _ in 0..20 {
            let a = random_image(&mut rng, 14, 14);
            let b = random_image(&mut rng, 14, 14);
            let s = ssim(&a, &b).unwrap();
            assert!((-1.0..=1.0).contains(&s), "ssim {s} out of [-1, 1]");
        }
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = StdRng::seed_from_u64(33);
        let a = random_image(&mut rng, 15, 12);
        let b = random_image(&mut rng, 15, 12);
        assert_abs_diff_eq!(
            ssim(&a, &b).unwrap(),
            ssim(&b, &a).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn shift_preserves_perfect_score() {
        // A common shift leaves contrast and structure untouched; for equal
        // images the luminance term stays exactly 1 as well. (For unequal
        // images the standard luminance term is *not* shift invariant, so no
        // general shift test exists.)
        let mut rng = StdRng::seed_from_u64(34);
        let data = Array3::from_shape_fn((16, 16, 3), |_| rng.random_range(0.0..=0.9));
        let a = ImageTensor::new(data.clone()).unwrap();
        let shifted = ImageTensor::new(data.mapv(|v| v + 0.1)).unwrap();
        let before = ssim(&a, &a).unwrap();
        let after = ssim(&shifted, &shifted).unwrap();
        assert!((before - after).abs() < 1e-6);
        assert_abs_diff_eq!(after, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn degraded_image_scores_below_self() {
        let mut rng = StdRng::seed_from_u64(35);
        let a = random_image(&mut rng, 16, 16);
        let noisy = ImageTensor::new(
            a.data()
                .mapv(|v| (v + rng.random_range(-0.2..=0.2)).clamp(0.0, 1.0)),
        )
        .unwrap();
        assert!(ssim(&a, &noisy).unwrap() < 1.0);
    }

    #[test]
    fn too_small_image_rejected() {
        let a = ImageTensor::constant(10, 16, [0.5; 3]).unwrap();
        let b = ImageTensor::constant(10, 16, [0.5; 3]).unwrap();
        assert!(ssim(&a, &b).is_err());
    }
}

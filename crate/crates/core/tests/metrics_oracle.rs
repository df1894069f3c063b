//! The optimized metric implementations must agree with the frozen
//! brute-force oracles in `support/`.

mod support;

use dewater_core::metrics::{psnr, ssim, uiqm};
use dewater_core::ImageTensor;
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
fn ssim_matches_oracle_on_random_images() {
    let mut rng = StdRng::seed_from_u64(101);
    for _ in 0..25 {
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        let fast = ssim(&a, &b).unwrap();
        let slow = support::oracle_ssim(&a, &b);
        assert!(
            (fast - slow).abs() < 1e-6,
            "ssim {fast} vs oracle {slow}"
        );
    }
}

#[test]
fn ssim_matches_oracle_on_rectangles() {
    let mut rng = StdRng::seed_from_u64(102);
    for &(h, w) in &[(11, 11), (11, 20), (23, 12), (32, 17)] {
        let a = random_image(&mut rng, h, w);
        let b = random_image(&mut rng, h, w);
        let fast = ssim(&a, &b).unwrap();
        let slow = support::oracle_ssim(&a, &b);
        assert!((fast - slow).abs() < 1e-6, "{h}x{w}: {fast} vs {slow}");
    }
}

#[test]
fn uiqm_matches_oracle_on_random_images() {
    let mut rng = StdRng::seed_from_u64(103);
    for _ in 0..25 {
        let img = random_image(&mut rng, 16, 16);
        let fast = uiqm(&img).unwrap();
        let slow = support::oracle_uiqm(&img);
        assert!(
            (fast - slow).abs() < 1e-6,
            "uiqm {fast} vs oracle {slow}"
        );
    }
}

#[test]
fn uiqm_matches_oracle_on_structured_images() {
    // Gradients, blocks and clipped waves exercise the trim, edge and
    // contrast paths differently from uniform noise.
    let mut rng = StdRng::seed_from_u64(104);
    for variant in 0..6 {
        let img = ImageTensor::new(Array3::from_shape_fn((24, 40, 3), |(y, x, c)| {
            match variant {
                0 => (x as f64 / 39.0 + c as f64 * 0.1).min(1.0),
                1 => ((x / 8 + y / 8) % 2) as f64,
                2 => (0.5 + 0.5 * ((x + 3 * c) as f64 * 0.7).sin()).clamp(0.0, 1.0),
                3 => {
                    if c == 0 {
                        0.9
                    } else {
                        y as f64 / 23.0
                    }
                }
                4 => rng.random_range(0.4..=0.6),
                _ => (x as f64 * y as f64 / (39.0 * 23.0)).powf(0.5),
            }
        }))
        .unwrap();
        let fast = uiqm(&img).unwrap();
        let slow = support::oracle_uiqm(&img);
        assert!(
            (fast - slow).abs() < 1e-6,
            "variant {variant}: {fast} vs oracle {slow}"
        );
    }
}

#[test]
fn psnr_matches_oracle_exactly() {
    let mut rng = StdRng::seed_from_u64(105);
    for _ in 0..25 {
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        assert_eq!(psnr(&a, &b).unwrap(), support::oracle_psnr(&a, &b));
    }
    let a = random_image(&mut rng, 16, 16);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
}

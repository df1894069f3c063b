//! Brute-force reference implementations ("oracles") for the image quality
//! metrics, written directly from the published definitions with explicit
//! per-window loops and no code shared with the optimized implementations.
//! These were authored and frozen before the main metric code existed; the
//! integration tests assert the optimized paths agree with them.

#![allow(dead_code)]

use dewater_core::ImageTensor;

/// PSNR from first principles: mean squared error over every element,
/// peak 1.0, capped at 100 dB for a zero-error pair.
pub fn oracle_psnr(pred: &ImageTensor, reference: &ImageTensor) -> f64 {
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for (p, r) in pred.data().iter().zip(reference.data().iter()) {
        let d = p - r;
        sum_sq += d * d;
        n += 1;
    }
    let mse = sum_sq / n as f64;
    if mse == 0.0 {
        100.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(100.0)
    }
}

/// Structural similarity evaluated window by window.
///
/// 11x11 Gaussian weights (sigma 1.5) normalized to sum 1; weighted means,
/// biased weighted variances and covariance per window; only fully interior
/// windows count; channels scored independently then averaged.
pub fn oracle_ssim(pred: &ImageTensor, reference: &ImageTensor) -> f64 {
    const WIN: usize = 11;
    const SIGMA: f64 = 1.5;
    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    let c1 = (K1 * 1.0) * (K1 * 1.0);
    let c2 = (K2 * 1.0) * (K2 * 1.0);

    // Full 2D kernel, normalized as a whole.
    let mut kernel = [[0.0f64; WIN]; WIN];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let di = i as f64 - 5.0;
            let dj = j as f64 - 5.0;
            *w = (-(di * di + dj * dj) / (2.0 * SIGMA * SIGMA)).exp();
            total += *w;
        }
    }
    for row in kernel.iter_mut() {
        for w in row.iter_mut() {
            *w /= total;
        }
    }

    let h = pred.height();
    let w = pred.width();
    assert!(h >= WIN && w >= WIN, "oracle_ssim needs at least 11x11");
    let mut channel_scores = [0.0f64; 3];
    for (c, score) in channel_scores.iter_mut().enumerate() {
        let mut sum = 0.0;
        let mut windows = 0usize;
        for y0 in 0..=(h - WIN) {
            for x0 in 0..=(w - WIN) {
                let mut mu_x = 0.0;
                let mut mu_y = 0.0;
                for (i, row) in kernel.iter().enumerate() {
                    for (j, &wt) in row.iter().enumerate() {
                        mu_x += wt * pred.data()[(y0 + i, x0 + j, c)];
                        mu_y += wt * reference.data()[(y0 + i, x0 + j, c)];
                    }
                }
                let mut var_x = 0.0;
                let mut var_y = 0.0;
                let mut cov = 0.0;
                for (i, row) in kernel.iter().enumerate() {
                    for (j, &wt) in row.iter().enumerate() {
                        let dx = pred.data()[(y0 + i, x0 + j, c)] - mu_x;
                        let dy = reference.data()[(y0 + i, x0 + j, c)] - mu_y;
                        var_x += wt * dx * dx;
                        var_y += wt * dy * dy;
                        cov += wt * dx * dy;
                    }
                }
                let num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
                let den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
                sum += num / den;
                windows += 1;
            }
        }
        *score = sum / windows as f64;
    }
    (channel_scores[0] + channel_scores[1] + channel_scores[2]) / 3.0
}

/// Asymmetric alpha-trimmed mean: drop floor(alpha*N) values from each tail
/// of the sorted sample, average the rest.
fn trimmed_mean(values: &[f64], alpha: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let t = (alpha * n as f64).floor() as usize;
    let kept = &sorted[t..n - t];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Population variance of all values about a given center.
fn variance_about(values: &[f64], center: f64) -> f64 {
    values.iter().map(|v| (v - center) * (v - center)).sum::<f64>() / values.len() as f64
}

/// Colourfulness: trimmed statistics of the two opponent channels.
fn oracle_uicm(img: &ImageTensor) -> f64 {
    let h = img.height();
    let w = img.width();
    let mut rg = Vec::with_capacity(h * w);
    let mut yb = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let r = img.data()[(y, x, 0)];
            let g = img.data()[(y, x, 1)];
            let b = img.data()[(y, x, 2)];
            rg.push(r - g);
            yb.push((r + g) / 2.0 - b);
        }
    }
    let mu_rg = trimmed_mean(&rg, 0.1);
    let mu_yb = trimmed_mean(&yb, 0.1);
    let var_rg = variance_about(&rg, mu_rg);
    let var_yb = variance_about(&yb, mu_yb);
    -0.0268 * (mu_rg * mu_rg + mu_yb * mu_yb).sqrt()
        + 0.1586 * (var_rg + var_yb).sqrt()
}

/// Sobel gradient magnitude with replicated borders.
fn sobel_magnitude(plane: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = plane.len();
    let w = plane[0].len();
    let at = |y: isize, x: isize| -> f64 {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        plane[yy][xx]
    };
    let mut out = vec![vec![0.0; w]; h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = -at(y - 1, x - 1) + at(y - 1, x + 1) - 2.0 * at(y, x - 1)
                + 2.0 * at(y, x + 1)
                - at(y + 1, x - 1)
                + at(y + 1, x + 1);
            let gy = -at(y - 1, x - 1) - 2.0 * at(y - 1, x) - at(y - 1, x + 1)
                + at(y + 1, x - 1)
                + 2.0 * at(y + 1, x)
                + at(y + 1, x + 1);
            out[y as usize][x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// EME of one plane over full 8x8 blocks: (2 / nblocks) * sum ln(max/min),
/// blocks whose minimum is zero contribute nothing, partial blocks dropped.
fn oracle_eme(plane: &[Vec<f64>]) -> f64 {
    let h = plane.len();
    let w = plane[0].len();
    let by = h / 8;
    let bx = w / 8;
    let mut sum = 0.0;
    for i in 0..by {
        for j in 0..bx {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for y in i * 8..(i + 1) * 8 {
                for x in j * 8..(j + 1) * 8 {
                    lo = lo.min(plane[y][x]);
                    hi = hi.max(plane[y][x]);
                }
            }
            if lo > 0.0 && hi > 0.0 {
                sum += (hi / lo).ln();
            }
        }
    }
    2.0 / (by * bx) as f64 * sum
}

/// Sharpness: luminance-weighted EME of Sobel-magnitude-times-intensity.
fn oracle_uism(img: &ImageTensor) -> f64 {
    let h = img.height();
    let w = img.width();
    let weights = [0.299, 0.587, 0.114];
    let mut total = 0.0;
    for c in 0..3 {
        let plane: Vec<Vec<f64>> = (0..h)
            .map(|y| (0..w).map(|x| img.data()[(y, x, c)]).collect())
            .collect();
        let mag = sobel_magnitude(&plane);
        let edge: Vec<Vec<f64>> = (0..h)
            .map(|y| (0..w).map(|x| mag[y][x] * plane[y][x]).collect())
            .collect();
        total += weights[c] * oracle_eme(&edge);
    }
    total
}

/// Contrast: negated entropy of the Michelson contrast over full 8x8 blocks,
/// with max/min taken across all three channels jointly; degenerate blocks
/// (zero span or zero sum) contribute nothing.
fn oracle_uiconm(img: &ImageTensor) -> f64 {
    let h = img.height();
    let w = img.width();
    let by = h / 8;
    let bx = w / 8;
    let mut sum = 0.0;
    for i in 0..by {
        for j in 0..bx {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for y in i * 8..(i + 1) * 8 {
                for x in j * 8..(j + 1) * 8 {
                    for c in 0..3 {
                        let v = img.data()[(y, x, c)];
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            let top = hi - lo;
            let bot = hi + lo;
            if top > 0.0 && bot > 0.0 {
                let r = top / bot;
                sum += r * r.ln();
            }
        }
    }
    -(1.0 / (by * bx) as f64) * sum
}

/// The combined no-reference quality measure.
pub fn oracle_uiqm(img: &ImageTensor) -> f64 {
    assert!(
        img.height() >= 8 && img.width() >= 8,
        "oracle_uiqm needs at least one 8x8 block"
    );
    0.0282 * oracle_uicm(img) + 0.2953 * oracle_uism(img) + 3.5753 * oracle_uiconm(img)
}

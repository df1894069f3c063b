//! No-reference underwater image quality measure.
//!
//! Linear combination of three sub-measures:
//!
//! - UICM (colourfulness): asymmetric alpha-trimmed statistics of the
//!   opponent channels `RG = R - G` and `YB = (R+G)/2 - B`.
//! - UISM (sharpness): luminance-weighted EME of the Sobel edge maps.
//! - UIConM (contrast): negated Michelson-contrast entropy over blocks.
//!
//! Block conventions, applied uniformly: 8x8 blocks, partial blocks at the
//! right/bottom edge dropped, and any block whose ratio is undefined (zero
//! minimum, span or sum) contributes 0. A constant image therefore scores 0.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

const BLOCK: usize = 8;
const TRIM_ALPHA: f64 = 0.1;
const C_UICM: f64 = 0.0282;
const C_UISM: f64 = 0.2953;
const C_UICONM: f64 = 3.5753;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Trimmed mean (drop `floor(alpha*N)` from each sorted tail) and the
/// population variance of *all* values about that mean.
fn trimmed_stats(values: &mut [f64]) -> (f64, f64) {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let t = (TRIM_ALPHA * n as f64).floor() as usize;
    let kept = &values[t..n - t];
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var)
}

fn uicm(img: &ImageTensor) -> f64 {
    let n = img.height() * img.width();
    let mut rg = Vec::with_capacity(n);
    let mut yb = Vec::with_capacity(n);
    for row in img.data().rows() {
        let (r, g, b) = (row[0], row[1], row[2]);
        rg.push(r - g);
        yb.push((r + g) / 2.0 - b);
    }
    let (mu_rg, var_rg) = trimmed_stats(&mut rg);
    let (mu_yb, var_yb) = trimmed_stats(&mut yb);
    -0.0268 * (mu_rg * mu_rg + mu_yb * mu_yb).sqrt() + 0.1586 * (var_rg + var_yb).sqrt()
}

/// Sobel gradient magnitude with replicated borders.
fn sobel_magnitude(plane: &Array2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    let at = |y: isize, x: isize| -> f64 {
        plane[(
            y.clamp(0, h as isize - 1) as usize,
            x.clamp(0, w as isize - 1) as usize,
        )]
    };
    Array2::from_shape_fn((h, w), |(yu, xu)| {
        let (y, x) = (yu as isize, xu as isize);
        let gx = at(y - 1, x + 1) - at(y - 1, x - 1) + 2.0 * (at(y, x + 1) - at(y, x - 1))
            + at(y + 1, x + 1)
            - at(y + 1, x - 1);
        let gy = at(y + 1, x - 1) - at(y - 1, x - 1) + 2.0 * (at(y + 1, x) - at(y - 1, x))
            + at(y + 1, x + 1)
            - at(y - 1, x + 1);
        (gx * gx + gy * gy).sqrt()
    })
}

/// EME over full blocks: `(2 / nblocks) * sum ln(max/min)`; a block touching
/// zero contributes nothing.
fn eme(plane: &Array2<f64>) -> f64 {
    let (h, w) = plane.dim();
    let (by, bx) = (h / BLOCK, w / BLOCK);
    let mut sum = 0.0;
    for i in 0..by {
        for j in 0..bx {
            let block = plane.slice(ndarray::s![
                i * BLOCK..(i + 1) * BLOCK,
                j * BLOCK..(j + 1) * BLOCK
            ]);
            let lo = block.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lo > 0.0 {
                sum += (hi / lo).ln();
            }
        }
    }
    2.0 / (by * bx) as f64 * sum
}

fn uism(img: &ImageTensor) -> f64 {
    let mut total = 0.0;
    for c in 0..3 {
        let plane = img.data().index_axis(Axis(2), c).to_owned();
        let edge = sobel_magnitude(&plane) * &plane;
        total += LUMA[c] * eme(&edge);
    }
    total
}

/// Negated Michelson-contrast entropy; max/min taken over the three channels
/// of each block jointly.
fn uiconm(img: &ImageTensor) -> f64 {
    let (h, w) = (img.height(), img.width());
    let (by, bx) = (h / BLOCK, w / BLOCK);
    let mut sum = 0.0;
    for i in 0..by {
        for j in 0..bx {
            let block = img.data().slice(ndarray::s![
                i * BLOCK..(i + 1) * BLOCK,
                j * BLOCK..(j + 1) * BLOCK,
                ..
            ]);
            let lo = block.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
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

/// Combined no-reference quality score; higher is better.
///
/// The image must contain at least one full 8x8 block.
pub fn uiqm(img: &ImageTensor) -> Result<f64> {
    if img.height() < BLOCK || img.width() < BLOCK {
        return Err(Error::invalid(format!(
            "uiqm needs at least {BLOCK}x{BLOCK}, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(C_UICM * uicm(img) + C_UISM * uism(img) + C_UICONM * uiconm(img))
}

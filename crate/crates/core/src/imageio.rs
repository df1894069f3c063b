//! Image file I/O and the padding policy for free-size inference.
//!
//! Files decode to [`ImageTensor`]s (f64 in `[0,1]`, HWC); tensors encode to
//! 8-bit PNG via `round(255*x)`. PNG and JPEG are accepted on input, output
//! is always PNG (lossless — a restored image re-compressed lossily would
//! corrupt the very pixels the model fixed).

use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Decode a PNG or JPEG file to a unit-interval tensor.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes, path)
}

/// Decode an in-memory PNG or JPEG. `origin` only labels errors — callers
/// that already hold the file bytes (for hashing) can decode without a
/// second read.
pub fn decode_bytes(bytes: &[u8], origin: &Path) -> Result<ImageTensor> {
    let decoded = image::load_from_memory(bytes)
        .map_err(|e| Error::invalid(format!("cannot decode {}: {e}", origin.display())))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    let data = Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
        f64::from(raw[(y * w + x) * 3 + c]) / 255.0
    });
    ImageTensor::new(data)
}

/// Image dimensions `(height, width)` from the file header, without
/// decoding pixel data.
pub fn probe_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    Ok((h as usize, w as usize))
}

/// Encode as 8-bit PNG, quantizing with `round(255*x)`.
pub fn save_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut raw = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                raw.push((img.data()[[y, x, c]] * 255.0).round() as u8);
            }
        }
    }
    let rgb = RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer length matches dimensions");
    rgb.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))
}

/// All decodable image files (png/jpg/jpeg, case-insensitive) directly in
/// `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Mirror index into `0..n` without repeating the edge sample (period
/// `2n-2`), so any pad amount stays well-defined even past `n-1`.
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let q = i % period;
    if q < n {
        q
    } else {
        period - q
    }
}

/// Reflect-pad on the bottom and right edges up to the next multiple of
/// `multiple`, so a padded result crops back from the origin. Returns the
/// padded tensor with the original size (already a multiple → unchanged).
pub fn pad_to_multiple(img: &ImageTensor, multiple: usize) -> Result<ImageTensor> {
    if multiple == 0 {
        return Err(Error::invalid("pad multiple must be positive"));
    }
    let (h, w) = (img.height(), img.width());
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return Ok(img.clone());
    }
    let data = Array3::from_shape_fn((ph, pw, 3), |(y, x, c)| {
        img.data()[[reflect_index(y, h), reflect_index(x, w), c]]
    });
    ImageTensor::new(data)
}

/// Crop back to `height`x`width` from the origin; inverse of
/// [`pad_to_multiple`] for the original size.
pub fn crop_to(img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if height > img.height() || width > img.width() {
        return Err(Error::invalid(format!(
            "cannot crop {}x{} out of {}x{}",
            height,
            width,
            img.height(),
            img.width()
        )));
    }
    let data = img
        .data()
        .slice(ndarray::s![..height, ..width, ..])
        .to_owned();
    ImageTensor::new(data)
}

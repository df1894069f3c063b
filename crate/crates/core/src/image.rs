//! Core image-domain tensor types.
//!
//! All physics and metrics run on `f64` arrays in linear intensity, shaped
//! `(height, width, 3)` with channels ordered R, G, B. 8-bit files are mapped
//! to `[0, 1]` by `/255` at decode time (see [`crate::imageio`]); no gamma
//! linearisation is applied.

use ndarray::{Array2, Array3, ArrayView3, Axis};

use crate::error::{Error, Result};

/// Lower bound applied to every transmission value.
///
/// Keeps the recomposition `J*T + A*(1-T)` invertible and its gradients finite
/// in float32: a zero transmission would make the formation model lose all
/// scene content and the elementwise division used to recover `T` blow up.
pub const T_FLOOR: f64 = 1e-3;

/// Denominator guard for the transmission estimator: wherever
/// `|reference - veiling|` falls below this, the quotient is undefined and the
/// output is pinned at [`T_FLOOR`].
pub const DENOM_EPS: f64 = 1e-3;

/// How many values an operation had to clamp back into its valid range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClampStats {
    /// Number of elements that fell outside the valid range before clamping.
    pub clamped: usize,
    /// Total number of elements examined.
    pub total: usize,
}

impl ClampStats {
    /// Fraction of elements that needed clamping, in `[0, 1]`.
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.clamped as f64 / self.total as f64
        }
    }

    pub fn merge(&mut self, other: ClampStats) {
        self.clamped += other.clamped;
        self.total += other.total;
    }
}

/// Clamp every element of `data` into `[lo, hi]`, counting how many moved.
pub(crate) fn clamp_count(data: &mut Array3<f64>, lo: f64, hi: f64) -> ClampStats {
    let mut clamped = 0usize;
    let total = data.len();
    for v in data.iter_mut() {
        if *v < lo {
            *v = lo;
            clamped += 1;
        } else if *v > hi {
            *v = hi;
            clamped += 1;
        }
    }
    ClampStats { clamped, total }
}

fn check_spatial(shape: &[usize]) -> Result<()> {
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::invalid(format!(
            "expected an (H, W, 3) array, got {shape:?}"
        )));
    }
    if shape[0] < 1 || shape[1] < 1 {
        return Err(Error::invalid(format!(
            "image must be at least 1x1, got {shape:?}"
        )));
    }
    Ok(())
}

/// An RGB image of linear intensities in `[0, 1]`, shaped `(H, W, 3)`.
///
/// The universal currency of the toolkit: scene radiance, underwater
/// observations and network outputs all use this type.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    /// Validate and wrap an `(H, W, 3)` array of intensities in `[0, 1]`.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        check_spatial(data.shape())?;
        for v in data.iter() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::invalid(format!(
                    "image intensity {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self { data })
    }

    /// Wrap an array known to satisfy the invariants (output of a clamping op).
    pub(crate) fn from_clamped(data: Array3<f64>) -> Self {
        debug_assert!(data
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        Self { data }
    }

    /// A constant-colour image.
    pub fn constant(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut data = Array3::zeros((height, width, 3));
        for c in 0..3 {
            data.index_axis_mut(Axis(2), c).fill(rgb[c]);
        }
        Self::new(data)
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// Per-channel arithmetic mean `(R, G, B)`.
    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.height() * self.width()) as f64;
        let mut means = [0.0; 3];
        for (c, m) in means.iter_mut().enumerate() {
            *m = self.data.index_axis(Axis(2), c).sum() / n;
        }
        means
    }
}

/// A per-pixel, per-channel transmittance field in `[T_FLOOR, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    data: Array3<f64>,
}

impl TransmissionMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        check_spatial(data.shape())?;
        for v in data.iter() {
            if !v.is_finite() || *v < T_FLOOR || *v > 1.0 {
                return Err(Error::invalid(format!(
                    "transmission value {v} outside [{T_FLOOR}, 1]"
                )));
            }
        }
        Ok(Self { data })
    }

    pub(crate) fn from_clamped(data: Array3<f64>) -> Self {
        debug_assert!(data
            .iter()
            .all(|v| v.is_finite() && (T_FLOOR..=1.0).contains(v)));
        Self { data }
    }

    /// A spatially uniform transmission.
    pub fn constant(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut data = Array3::zeros((height, width, 3));
        for c in 0..3 {
            data.index_axis_mut(Axis(2), c).fill(rgb[c]);
        }
        Self::new(data)
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

/// Scattered ambient light added along the line of sight, per pixel and
/// channel, in `[0, 1]`.
///
/// `constant` is true when the field is spatially uniform (the gray-world
/// estimator always produces such fields); spatially varying fields remain
/// representable for the full radiative model.
#[derive(Debug, Clone, PartialEq)]
pub struct VeilingLightField {
    data: Array3<f64>,
    constant: bool,
}

impl VeilingLightField {
    /// Wrap a spatially varying field.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        check_spatial(data.shape())?;
        for v in data.iter() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::invalid(format!(
                    "veiling light value {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            data,
            constant: false,
        })
    }

    /// Broadcast a single colour over the whole field and mark it uniform.
    pub fn uniform(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        if height < 1 || width < 1 {
            return Err(Error::invalid("veiling light field must be at least 1x1"));
        }
        for v in rgb {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "veiling light value {v} outside [0, 1]"
                )));
            }
        }
        let mut data = Array3::zeros((height, width, 3));
        for c in 0..3 {
            data.index_axis_mut(Axis(2), c).fill(rgb[c]);
        }
        Ok(Self {
            data,
            constant: true,
        })
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    /// The single colour of a uniform field.
    pub fn uniform_rgb(&self) -> Option<[f64; 3]> {
        if !self.constant {
            return None;
        }
        Some([
            self.data[(0, 0, 0)],
            self.data[(0, 0, 1)],
            self.data[(0, 0, 2)],
        ])
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

/// Per-pixel camera-to-object distances in meters, `(H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    data: Array2<f64>,
}

impl DepthMap {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.shape()[0] < 1 || data.shape()[1] < 1 {
            return Err(Error::invalid("depth map must be at least 1x1"));
        }
        for v in data.iter() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::invalid(format!(
                    "depth {v} must be finite and non-negative"
                )));
            }
        }
        Ok(Self { data })
    }

    pub fn constant(height: usize, width: usize, depth: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), depth))
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_intensities() {
        let mut data = Array3::zeros((2, 2, 3));
        data[(0, 0, 0)] = 1.5;
        assert!(ImageTensor::new(data).is_err());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let data = Array3::zeros((2, 2, 4));
        assert!(ImageTensor::new(data).is_err());
    }

    #[test]
    fn uniform_veiling_reports_colour() {
        let a = VeilingLightField::uniform(4, 5, [0.1, 0.2, 0.3]).unwrap();
        assert!(a.is_constant());
        assert_eq!(a.uniform_rgb(), Some([0.1, 0.2, 0.3]));
    }

    #[test]
    fn transmission_floor_enforced() {
        let data = Array3::from_elem((2, 2, 3), 1e-5);
        assert!(TransmissionMap::new(data).is_err());
    }

    #[test]
    fn channel_means_of_split_image() {
        let mut data = Array3::zeros((2, 2, 3));
        // Half black, half white in every channel.
        for c in 0..3 {
            data[(0, 0, c)] = 1.0;
            data[(0, 1, c)] = 1.0;
        }
        let img = ImageTensor::new(data).unwrap();
        assert_eq!(img.channel_means(), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn clamp_count_counts_both_sides() {
        let mut data = Array3::from_elem((1, 2, 3), 0.5);
        data[(0, 0, 0)] = -0.2;
        data[(0, 1, 2)] = 1.4;
        let stats = clamp_count(&mut data, 0.0, 1.0);
        assert_eq!(stats.clamped, 2);
        assert_eq!(stats.total, 6);
        assert_eq!(data[(0, 0, 0)], 0.0);
        assert_eq!(data[(0, 1, 2)], 1.0);
    }
}

//! Underwater image formation: composition, transmission, veiling light.
//!
//! The simplified formation model treats an observed underwater pixel as a
//! convex combination of the scene radiance and the ambient veiling light,
//! weighted by the transmittance of the water column:
//!
//! ```text
//! I(u) = J(u) * T(u) + A(u) * (1 - T(u))        (per channel)
//! T(u) = exp(-beta * d(u))
//! ```
//!
//! A fuller radiative transfer form ([`duntley_radiance`]) also models the
//! in-scattering that grows along the path. Both are invertible enough to
//! serve as supervision targets: [`estimate_transmission`] recovers `T` in
//! closed form from an (observed, reference) pair, and
//! [`estimate_veiling_light`] is the gray-world ambient estimator.

use ndarray::{Array3, Axis, Zip};

use crate::error::{Error, Result};
use crate::image::{
    clamp_count, ClampStats, DepthMap, ImageTensor, TransmissionMap, VeilingLightField, DENOM_EPS,
    T_FLOOR,
};

fn check_same_shape(context: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            context,
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(())
}

/// Compose an underwater observation from scene radiance, transmission and
/// veiling light: `I = J*T + A*(1-T)` per pixel and channel.
///
/// With `T` in `[T_FLOOR, 1]` and `J`, `A` in `[0, 1]` the result is a convex
/// combination and needs no clamping; the returned [`ClampStats`] only counts
/// float round-off excursions.
pub fn compose_underwater(
    scene: &ImageTensor,
    transmission: &TransmissionMap,
    veiling: &VeilingLightField,
) -> Result<(ImageTensor, ClampStats)> {
    check_same_shape(
        "compose_underwater scene/transmission",
        scene.data().shape(),
        transmission.data().shape(),
    )?;
    check_same_shape(
        "compose_underwater scene/veiling",
        scene.data().shape(),
        veiling.data().shape(),
    )?;
    let mut out = Array3::zeros(scene.data().raw_dim());
    Zip::from(&mut out)
        .and(scene.data())
        .and(transmission.data())
        .and(veiling.data())
        .for_each(|o, &j, &t, &a| {
            *o = j * t + a * (1.0 - t);
        });
    let stats = clamp_count(&mut out, 0.0, 1.0);
    Ok((ImageTensor::from_clamped(out), stats))
}

/// Exponential attenuation of a depth map: `T_c(u) = exp(-beta_c * d(u))`.
///
/// `beta` holds per-channel attenuation coefficients in 1/m and must be
/// non-negative; the result is floored at [`T_FLOOR`].
pub fn transmission_from_depth(
    depth: &DepthMap,
    beta: [f64; 3],
) -> Result<(TransmissionMap, ClampStats)> {
    for b in beta {
        if !b.is_finite() || b < 0.0 {
            return Err(Error::invalid(format!(
                "attenuation coefficient {b} must be finite and non-negative"
            )));
        }
    }
    let (h, w) = (depth.height(), depth.width());
    let mut out = Array3::zeros((h, w, 3));
    for c in 0..3 {
        let mut plane = out.index_axis_mut(Axis(2), c);
        Zip::from(&mut plane).and(depth.data()).for_each(|t, &d| {
            *t = (-beta[c] * d).exp();
        });
    }
    let stats = clamp_count(&mut out, T_FLOOR, 1.0);
    Ok((TransmissionMap::from_clamped(out), stats))
}

/// Parameters of the radiative transfer model for one channel.
///
/// Models the apparent radiance of an object seen through `range` meters of
/// water: the inherent signal decays at the total attenuation rate `alpha`
/// while scattered ambient light builds up, governed by the diffuse
/// attenuation rate `k` along a path inclined at `theta` from vertical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuntleyParams {
    /// Inherent object radiance at zero distance, in `[0, 1]`.
    pub inherent_radiance: f64,
    /// Ambient background radiance, in `[0, 1]`.
    pub ambient_radiance: f64,
    /// Total (beam) attenuation coefficient, 1/m, non-negative.
    pub alpha: f64,
    /// Diffuse attenuation coefficient of the ambient field, 1/m.
    pub k: f64,
    /// Path length in meters, non-negative.
    pub range: f64,
    /// Path inclination from vertical, radians, in `[0, pi]`.
    pub theta: f64,
}

impl DuntleyParams {
    /// Validate ranges plus the physical requirement that the net extinction
    /// of the scattered term, `alpha*r - k*r*cos(theta)`, is non-negative:
    /// scattered light cannot be amplified along the path.
    pub fn validate(&self) -> Result<()> {
        for (name, v, lo, hi) in [
            ("inherent_radiance", self.inherent_radiance, 0.0, 1.0),
            ("ambient_radiance", self.ambient_radiance, 0.0, 1.0),
            ("theta", self.theta, 0.0, std::f64::consts::PI),
        ] {
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::invalid(format!(
                    "{name} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("range", self.range)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} = {v} must be finite and non-negative"
                )));
            }
        }
        if !self.k.is_finite() {
            return Err(Error::invalid("k must be finite"));
        }
        let net = self.alpha * self.range - self.k * self.range * self.theta.cos();
        if net < 0.0 {
            return Err(Error::invalid(format!(
                "net extinction alpha*r - k*r*cos(theta) = {net} is negative; \
                 the scattered path would be amplifying"
            )));
        }
        Ok(())
    }
}

/// Apparent radiance after `range` meters of water, for one channel.
///
/// ```text
/// N_r = N_0 * exp(-alpha * r)
///     + N_amb * exp(k * r * cos(theta)) * (1 - exp(-alpha*r + k*r*cos(theta)))
/// ```
///
/// The first term is the attenuated object signal, the second the veiling
/// light accumulated along the path. Returns the radiance clamped to `[0, 1]`
/// together with the pre-clamp value so callers can check the raw model.
pub fn duntley_radiance(params: &DuntleyParams) -> Result<(f64, f64)> {
    params.validate()?;
    let ar = params.alpha * params.range;
    let krc = params.k * params.range * params.theta.cos();
    let direct = params.inherent_radiance * (-ar).exp();
    let scattered = params.ambient_radiance * krc.exp() * (1.0 - (-ar + krc).exp());
    let raw = direct + scattered;
    Ok((raw.clamp(0.0, 1.0), raw))
}

/// Gray-world estimate of the veiling light from a single underwater image.
///
/// The ambient colour is taken as the per-channel mean of the observation,
/// scaled by per-channel illumination gains (1 for a neutral scene):
/// `A_c = gain_c * mean_c(I)`. Returns a spatially uniform field.
pub fn estimate_veiling_light(
    observed: &ImageTensor,
    gains: [f64; 3],
) -> Result<VeilingLightField> {
    for g in gains {
        if !g.is_finite() || g < 0.0 {
            return Err(Error::invalid(format!(
                "illumination gain {g} must be finite and non-negative"
            )));
        }
    }
    let means = observed.channel_means();
    let rgb = [
        (gains[0] * means[0]).clamp(0.0, 1.0),
        (gains[1] * means[1]).clamp(0.0, 1.0),
        (gains[2] * means[2]).clamp(0.0, 1.0),
    ];
    VeilingLightField::uniform(observed.height(), observed.width(), rgb)
}

/// Closed-form transmission recovered from an (observed, reference) pair:
///
/// ```text
/// T(u) = (I(u) - A(u)) / (J(u) - A(u))        (per channel)
/// ```
///
/// Wherever `|J - A| < DENOM_EPS` the quotient is undefined (the scene colour
/// matches the veiling light, so attenuation is unobservable) and the output
/// is pinned at [`T_FLOOR`]; those pixels are counted in the returned stats
/// along with values clamped into `[T_FLOOR, 1]`.
pub fn estimate_transmission(
    observed: &ImageTensor,
    reference: &ImageTensor,
    veiling: &VeilingLightField,
) -> Result<(TransmissionMap, ClampStats)> {
    check_same_shape(
        "estimate_transmission observed/reference",
        observed.data().shape(),
        reference.data().shape(),
    )?;
    check_same_shape(
        "estimate_transmission observed/veiling",
        observed.data().shape(),
        veiling.data().shape(),
    )?;
    let mut out = Array3::zeros(observed.data().raw_dim());
    let mut degenerate = 0usize;
    Zip::from(&mut out)
        .and(observed.data())
        .and(reference.data())
        .and(veiling.data())
        .for_each(|t, &i, &j, &a| {
            let denom = j - a;
            if denom.abs() < DENOM_EPS {
                *t = T_FLOOR;
                degenerate += 1;
            } else {
                *t = (i - a) / denom;
            }
        });
    let mut stats = clamp_count(&mut out, T_FLOOR, 1.0);
    stats.clamped += degenerate;
    Ok((TransmissionMap::from_clamped(out), stats))
}

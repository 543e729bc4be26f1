//! Dual-transmission rain formation model.
//!
//! A rainy image mixes the background `J` and a constant atmosphere light
//! `A` through the sum of two transmission maps, one for rain streaks and
//! one for vapor:
//!
//! ```text
//! I = (Ts + Tv) * J + (1 - (Ts + Tv)) * A
//! ```
//!
//! Both maps are single channel and broadcast across RGB.

use crate::error::{Error, Result};
use crate::image::{clamp_unit, ensure_same_dims, AtmosphereLight, Field, Image, Mask, TransmissionMap};

/// Default lower clamp on the combined transmission when inverting the model.
pub const DEFAULT_EPS: f64 = 0.05;

/// Slack allowed on `Ts + Tv <= 1` before [`compose`] rejects its input.
pub const TRANSMISSION_SLACK: f64 = 1e-9;

/// Renders a rainy image from a background, both transmission maps and the atmosphere light.
pub fn compose(
    background: &Image,
    t_streak: &TransmissionMap,
    t_vapor: &TransmissionMap,
    atmosphere: AtmosphereLight,
) -> Result<Image> {
    ensure_same_dims("compose streak map", background.dims(), t_streak.dims())?;
    ensure_same_dims("compose vapor map", background.dims(), t_vapor.dims())?;
    let (h, w) = background.dims();
    let a = atmosphere.rgb();
    let mut out = Vec::with_capacity(h * w * 3);
    for (idx, px) in background.data().chunks_exact(3).enumerate() {
        let t = t_streak.data()[idx] + t_vapor.data()[idx];
        if t > 1.0 + TRANSMISSION_SLACK {
            return Err(Error::TransmissionRangeViolation { row: idx / w, col: idx % w, sum: t });
        }
        let t = t.min(1.0);
        for c in 0..3 {
            out.push(clamp_unit(t * px[c] + (1.0 - t) * a[c]));
        }
    }
    Image::new(h, w, out)
}

/// Per-pixel `clamp(Ts + Tv, eps, 1)`.
pub fn effective_transmission(t_streak: &TransmissionMap, t_vapor: &TransmissionMap, eps: f64) -> Result<TransmissionMap> {
    ensure_same_dims("effective transmission", t_streak.dims(), t_vapor.dims())?;
    check_eps(eps)?;
    let data = t_streak
        .data()
        .iter()
        .zip(t_vapor.data())
        .map(|(s, v)| (s + v).clamp(eps, 1.0))
        .collect();
    Field::new(t_streak.height(), t_streak.width(), data)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidParams(format!("eps must lie in (0, 0.5], got {eps}")));
    }
    Ok(())
}

/// Inverts [`compose`]: `J = (I - (1 - T') A) / T'` with `T' = clamp(Ts + Tv, eps, 1)`.
///
/// The result is clamped to `[0, 1]`.
pub fn recover_background(
    rainy: &Image,
    t_streak: &TransmissionMap,
    t_vapor: &TransmissionMap,
    atmosphere: AtmosphereLight,
    eps: f64,
) -> Result<Image> {
    ensure_same_dims("recover streak map", rainy.dims(), t_streak.dims())?;
    let t = effective_transmission(t_streak, t_vapor, eps)?;
    let a = atmosphere.rgb();
    let mut out = Vec::with_capacity(rainy.data().len());
    for (px, &t) in rainy.data().chunks_exact(3).zip(t.data()) {
        for c in 0..3 {
            out.push(clamp_unit((px[c] - (1.0 - t) * a[c]) / t));
        }
    }
    Image::new(rainy.height(), rainy.width(), out)
}

/// One fully specified synthetic scene satisfying the formation model exactly.
#[derive(Debug, Clone)]
pub struct RainScene {
    pub background: Image,
    pub t_streak: TransmissionMap,
    pub t_vapor: TransmissionMap,
    pub atmosphere: AtmosphereLight,
    pub rainy: Image,
    pub streak_mask: Mask,
}

impl RainScene {
    /// Composes the rainy image from its parts.
    pub fn build(
        background: Image,
        t_streak: TransmissionMap,
        t_vapor: TransmissionMap,
        atmosphere: AtmosphereLight,
        streak_mask: Mask,
    ) -> Result<Self> {
        ensure_same_dims("scene mask", background.dims(), streak_mask.dims())?;
        let rainy = compose(&background, &t_streak, &t_vapor, atmosphere)?;
        Ok(Self { background, t_streak, t_vapor, atmosphere, rainy, streak_mask })
    }

    /// Largest per-pixel deviation between the stored rainy image and a fresh composition.
    pub fn consistency_error(&self) -> Result<f64> {
        let fresh = compose(&self.background, &self.t_streak, &self.t_vapor, self.atmosphere)?;
        Ok(max_abs_diff(fresh.data(), self.rainy.data()))
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

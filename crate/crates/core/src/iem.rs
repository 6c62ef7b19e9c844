//! Image enhancement: percentile-clipped RGB stretching followed by Lab-domain
//! stretching (linear on L, an exponential S-curve on a and b).

use serde::{Deserialize, Serialize};

use crate::colorspace::{self, LabImage, AB_MAX, AB_MIN, L_MAX};
use crate::error::{Error, Result};
use crate::imagecore::{FloatImage, Image, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IemConfig {
    /// Lower percentile, as a fraction in `[0,1)`.
    pub p_low: f64,
    /// Upper percentile, as a fraction in `(p_low,1]`.
    pub p_high: f64,
    /// Stretch each RGB channel before the Lab stage.
    pub rgb_prestretch: bool,
    /// Base of the a/b stretch curve; must exceed 1.
    pub ab_base: f64,
    /// Chroma magnitude at which the a/b curve returns to the identity.
    pub ab_range: f64,
}

impl Default for IemConfig {
    fn default() -> Self {
        IemConfig {
            p_low: 0.001,
            p_high: 0.999,
            rgb_prestretch: true,
            ab_base: 1.3,
            ab_range: 128.0,
        }
    }
}

impl IemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_low && self.p_low < self.p_high && self.p_high <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "percentiles must satisfy 0 <= p_low < p_high <= 1, got ({}, {})",
                self.p_low, self.p_high
            )));
        }
        if self.ab_base.is_nan() || self.ab_base <= 1.0 {
            return Err(Error::InvalidParameter(format!("ab_base must be > 1, got {}", self.ab_base)));
        }
        if self.ab_range.is_nan() || self.ab_range <= 0.0 {
            return Err(Error::InvalidParameter(format!("ab_range must be > 0, got {}", self.ab_range)));
        }
        Ok(())
    }
}

/// Exact-rank percentile bounds of a non-empty plane.
///
/// `lo` is the sample at rank `floor(p_low * (N-1))` of the sorted plane and
/// `hi` the one at rank `ceil(p_high * (N-1))`.
pub fn percentile_bounds(plane: &[f64], p_low: f64, p_high: f64) -> (f64, f64) {
    assert!(!plane.is_empty(), "percentile_bounds on an empty plane");
    let last = plane.len() - 1;
    let lo_rank = ((p_low * last as f64).floor() as usize).min(last);
    let hi_rank = ((p_high * last as f64).ceil() as usize).clamp(lo_rank, last);

    let mut scratch = plane.to_vec();
    let (_, &mut hi, _) = scratch.select_nth_unstable_by(hi_rank, f64::total_cmp);
    // Everything left of hi_rank is <= hi, so the lower rank can be found there.
    let lo = if lo_rank == hi_rank {
        hi
    } else {
        *scratch[..hi_rank]
            .select_nth_unstable_by(lo_rank, f64::total_cmp)
            .1
    };
    (lo, hi)
}

/// Clamps to `[lo,hi]` and maps linearly onto `[out_min,out_max]`.
/// A degenerate range (`hi == lo`) returns the plane unchanged.
pub fn stretch_channel(plane: &[f64], lo: f64, hi: f64, out_min: f64, out_max: f64) -> Vec<f64> {
    debug_assert!(out_min < out_max);
    if hi <= lo {
        return plane.to_vec();
    }
    let (span, width) = (hi - lo, out_max - out_min);
    // divide first so that hi lands exactly on out_max
    plane
        .iter()
        .map(|&x| out_min + (x.clamp(lo, hi) - lo) / span * width)
        .collect()
}

/// Per-channel percentile stretch of an RGB working image to `[0,1]`.
pub fn rgb_prestretch(img: &FloatImage, cfg: &IemConfig) -> FloatImage {
    let mut out = img.clone();
    for c in 0..CHANNELS {
        let plane = img.channel(c);
        let (lo, hi) = percentile_bounds(&plane, cfg.p_low, cfg.p_high);
        out.set_channel(c, &stretch_channel(&plane, lo, hi, 0.0, 1.0));
    }
    out
}

pub fn global_stretch_l(lab: &LabImage, cfg: &IemConfig) -> LabImage {
    let (lo, hi) = percentile_bounds(&lab.l, cfg.p_low, cfg.p_high);
    let mut out = lab.clone();
    out.l = stretch_channel(&lab.l, lo, hi, 0.0, L_MAX)
        .into_iter()
        .map(|v| v.clamp(0.0, L_MAX))
        .collect();
    out
}

/// The a/b curve `x * base^(1 - |x|/range)`, clamped to the Lab chroma bounds.
#[inline]
pub fn ab_curve(x: f64, base: f64, range: f64) -> f64 {
    (x * base.powf(1.0 - x.abs() / range)).clamp(AB_MIN, AB_MAX)
}

pub fn adaptive_stretch_ab(lab: &LabImage, cfg: &IemConfig) -> LabImage {
    let mut out = lab.clone();
    let ln_base = cfg.ab_base.ln();
    for plane in [&mut out.a, &mut out.b] {
        for v in plane.iter_mut() {
            let x = *v;
            *v = (x * (ln_base * (1.0 - x.abs() / cfg.ab_range)).exp()).clamp(AB_MIN, AB_MAX);
        }
    }
    out
}

/// Runs the enhancement chain in working space without quantizing.
pub fn enhance_float(img: &FloatImage, cfg: &IemConfig) -> FloatImage {
    let pre = if cfg.rgb_prestretch {
        rgb_prestretch(img, cfg)
    } else {
        img.clone()
    };
    let lab = colorspace::rgb_to_lab_float(&pre);
    let lab = global_stretch_l(&lab, cfg);
    let lab = adaptive_stretch_ab(&lab, cfg);
    colorspace::lab_to_rgb_float(&lab)
}

pub fn enhance(img: &Image, cfg: &IemConfig) -> Image {
    enhance_float(&img.to_float(), cfg).to_u8()
}

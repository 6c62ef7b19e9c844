//! Channel stabilization: rescale each RGB channel by `grand_mean / channel_mean`
//! so that no single channel dominates, then optionally re-stretch each
//! channel to the full range.
//!
//! Underwater scenes are typically blue-dominant (`mean_b >= mean_g >= mean_r`);
//! under that ordering the red gain is at least 1 and the blue gain at most 1.
//! The rescaling itself is ordering-agnostic.

use serde::{Deserialize, Serialize};

use crate::imagecore::{FloatImage, Image, CHANNELS};

/// Channel means below this (in `[0,1]` working space) are not rescaled.
pub const EPSILON_MEAN: f64 = 1.0 / 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean_r: f64,
    pub mean_g: f64,
    pub mean_b: f64,
    pub grand_mean: f64,
}

impl ChannelStats {
    /// The grand mean is held inside `[min, max]` of the channel means; plain
    /// `(r + g + b) / 3` can round one ulp below three equal inputs.
    pub fn from_means(mean_r: f64, mean_g: f64, mean_b: f64) -> Self {
        let lo = mean_r.min(mean_g).min(mean_b);
        let hi = mean_r.max(mean_g).max(mean_b);
        ChannelStats {
            mean_r,
            mean_g,
            mean_b,
            grand_mean: ((mean_r + mean_g + mean_b) / 3.0).clamp(lo, hi),
        }
    }

    pub fn means(&self) -> [f64; 3] {
        [self.mean_r, self.mean_g, self.mean_b]
    }

    /// Population standard deviation of the three channel means.
    pub fn dispersion(&self) -> f64 {
        let m = self.grand_mean;
        let var = self.means().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 3.0;
        var.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactors {
    pub scale_r: f64,
    pub scale_g: f64,
    pub scale_b: f64,
    /// Channels whose mean fell below [`EPSILON_MEAN`] and were left at scale 1.
    pub degenerate: [bool; 3],
}

impl ScaleFactors {
    pub fn as_array(&self) -> [f64; 3] {
        [self.scale_r, self.scale_g, self.scale_b]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilizationReport {
    pub stats: ChannelStats,
    pub scale_r: f64,
    pub scale_g: f64,
    pub scale_b: f64,
    pub degenerate_channels: [bool; 3],
    pub blue_dominant: bool,
    pub restretch_applied: bool,
    /// Fraction of all samples that exceeded 1 after scaling, before any re-stretch.
    pub clipped_fraction: f64,
}

/// Arithmetic mean of each channel of an 8-bit image, in working space.
pub fn channel_means(img: &Image) -> ChannelStats {
    let mut sums = [0u64; CHANNELS];
    for px in img.data().chunks_exact(CHANNELS) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += u64::from(v);
        }
    }
    let denom = img.pixel_count() as f64 * 255.0;
    ChannelStats::from_means(
        sums[0] as f64 / denom,
        sums[1] as f64 / denom,
        sums[2] as f64 / denom,
    )
}

pub fn channel_means_float(img: &FloatImage) -> ChannelStats {
    let mut sums = [0.0f64; CHANNELS];
    for px in img.data().chunks_exact(CHANNELS) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    let n = img.pixel_count() as f64;
    ChannelStats::from_means(sums[0] / n, sums[1] / n, sums[2] / n)
}

/// `mean_b >= mean_g >= mean_r`.
pub fn is_blue_dominant(stats: &ChannelStats) -> bool {
    stats.mean_b >= stats.mean_g && stats.mean_g >= stats.mean_r
}

pub fn scale_factors(stats: &ChannelStats) -> ScaleFactors {
    let mut degenerate = [false; 3];
    let mut scales = [1.0; 3];
    for (c, mean) in stats.means().into_iter().enumerate() {
        if mean < EPSILON_MEAN {
            degenerate[c] = true;
        } else {
            scales[c] = stats.grand_mean / mean;
        }
    }
    ScaleFactors {
        scale_r: scales[0],
        scale_g: scales[1],
        scale_b: scales[2],
        degenerate,
    }
}

/// Stabilizes a working-space image. The output is clamped to `[0,1]` but not quantized.
pub fn stabilize_float(img: &FloatImage, restretch: bool) -> (FloatImage, StabilizationReport) {
    let stats = channel_means_float(img);
    let factors = scale_factors(&stats);
    let scales = factors.as_array();

    let mut out = img.clone();
    let mut clipped = 0usize;
    for px in out.data_mut().chunks_exact_mut(CHANNELS) {
        for (v, s) in px.iter_mut().zip(scales) {
            *v *= s;
            if *v > 1.0 {
                clipped += 1;
            }
        }
    }

    if restretch {
        let mut min = [f64::INFINITY; CHANNELS];
        let mut max = [f64::NEG_INFINITY; CHANNELS];
        for px in out.data().chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                min[c] = min[c].min(px[c]);
                max[c] = max[c].max(px[c]);
            }
        }
        for px in out.data_mut().chunks_exact_mut(CHANNELS) {
            for c in 0..CHANNELS {
                if max[c] > min[c] {
                    px[c] = (px[c] - min[c]) / (max[c] - min[c]);
                }
            }
        }
    }
    out.clamp_unit();

    let report = StabilizationReport {
        stats,
        scale_r: factors.scale_r,
        scale_g: factors.scale_g,
        scale_b: factors.scale_b,
        degenerate_channels: factors.degenerate,
        blue_dominant: is_blue_dominant(&stats),
        restretch_applied: restretch,
        clipped_fraction: clipped as f64 / (img.pixel_count() * CHANNELS) as f64,
    };
    (out, report)
}

pub fn stabilize(img: &Image, restretch: bool) -> (Image, StabilizationReport) {
    let (out, report) = stabilize_float(&img.to_float(), restretch);
    (out.to_u8(), report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(r: u8, g: u8, b: u8) -> Image {
        Image::filled(4, 3, [r, g, b]).unwrap()
    }

    #[test]
    fn means_of_simple_images() {
        let z = channel_means(&constant(0, 0, 0));
        assert_eq!(z, ChannelStats::from_means(0.0, 0.0, 0.0));
        assert_eq!(z.grand_mean, 0.0);

        let s = channel_means(&constant(50, 100, 150));
        assert_eq!(s.means(), [50.0 / 255.0, 100.0 / 255.0, 150.0 / 255.0]);
        assert!((s.grand_mean - 100.0 / 255.0).abs() < 1e-15);

        let two = Image::new(2, 1, vec![10, 0, 0, 30, 0, 0]).unwrap();
        assert_eq!(channel_means(&two).mean_r, 20.0 / 255.0);
    }

    #[test]
    fn dominance_ordering() {
        let m = |r: f64, g: f64, b: f64| ChannelStats::from_means(r / 255.0, g / 255.0, b / 255.0);
        assert!(is_blue_dominant(&m(50.0, 100.0, 150.0)));
        assert!(!is_blue_dominant(&m(150.0, 100.0, 50.0)));
        assert!(is_blue_dominant(&m(80.0, 80.0, 80.0)));
    }

    #[test]
    fn scale_factor_cases() {
        let f = scale_factors(&ChannelStats::from_means(60.0 / 255.0, 90.0 / 255.0, 120.0 / 255.0));
        assert!((f.scale_r - 1.5).abs() < 1e-12);
        assert!((f.scale_g - 1.0).abs() < 1e-12);
        assert!((f.scale_b - 0.75).abs() < 1e-12);
        assert_eq!(f.degenerate, [false; 3]);

        let eq = scale_factors(&ChannelStats::from_means(0.25, 0.25, 0.25));
        assert_eq!(eq.as_array(), [1.0, 1.0, 1.0]);
        // (3m)/3 rounds below m for this value
        let m = 0.36995516654807925;
        assert!((m + m + m) / 3.0 < m);
        let eq = scale_factors(&ChannelStats::from_means(m, m, m));
        assert_eq!(eq.as_array(), [1.0, 1.0, 1.0]);

        let zero_r = scale_factors(&ChannelStats::from_means(0.0, 0.4, 0.5));
        assert_eq!(zero_r.scale_r, 1.0);
        assert_eq!(zero_r.degenerate, [true, false, false]);
    }

    #[test]
    fn constant_cast_collapses_to_gray() {
        let (out, rep) = stabilize(&constant(50, 100, 150), false);
        assert!(out.data().iter().all(|&v| v == 100));
        assert!((rep.scale_r - 2.0).abs() < 1e-12);
        assert!((rep.scale_g - 1.0).abs() < 1e-12);
        assert!((rep.scale_b - 2.0 / 3.0).abs() < 1e-12);
        assert!(rep.blue_dominant);
        assert_eq!(rep.clipped_fraction, 0.0);
        assert!(!rep.restretch_applied);
    }

    #[test]
    fn equal_means_are_identity() {
        // each channel is a permutation of the same values
        let img = Image::new(3, 1, vec![10, 20, 30, 20, 30, 10, 30, 10, 20]).unwrap();
        let (out, _) = stabilize(&img, false);
        assert_eq!(out, img);
    }

    #[test]
    fn clipping_with_scale_eight() {
        // red: one 200 among zeros, mean 10/255; G = B = 115 puts the grand mean at 80/255
        let mut data = Vec::new();
        for i in 0..20 {
            data.extend_from_slice(&[if i == 0 { 200 } else { 0 }, 115, 115]);
        }
        let img = Image::new(20, 1, data).unwrap();
        let (out, rep) = stabilize(&img, false);
        assert!((rep.scale_r - 8.0).abs() < 1e-12);
        // 200/255 * 8 = 1600/255 > 1
        assert_eq!(rep.clipped_fraction, 1.0 / 60.0);
        assert_eq!(out.pixel(0, 0)[0], 255);
    }

    #[test]
    fn restretch_spans_full_range() {
        let img = Image::from_fn(10, 1, |x, _| [20 + x as u8, 60 + 2 * x as u8, 150 + 3 * x as u8]).unwrap();
        let (out, rep) = stabilize(&img, true);
        assert!(rep.restretch_applied);
        for c in 0..3 {
            let plane: Vec<u8> = out.data().iter().skip(c).step_by(3).copied().collect();
            assert_eq!(*plane.iter().min().unwrap(), 0);
            assert_eq!(*plane.iter().max().unwrap(), 255);
        }
        // constant channels are left at their scaled value
        let (out, _) = stabilize(&constant(50, 100, 150), true);
        assert!(out.data().iter().all(|&v| v == 100));
    }

    #[test]
    fn dispersion_of_known_means() {
        let s = ChannelStats::from_means(60.0 / 255.0, 90.0 / 255.0, 120.0 / 255.0);
        assert!((s.dispersion() - 600f64.sqrt() / 255.0).abs() < 1e-15);
    }

    fn arb_means() -> impl Strategy<Value = [f64; 3]> {
        [0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0]
    }

    proptest! {
        #[test]
        fn blue_dominant_gains(mut m in arb_means()) {
            m.sort_by(f64::total_cmp);
            let stats = ChannelStats::from_means(m[0], m[1], m[2]);
            prop_assert!(is_blue_dominant(&stats));
            let f = scale_factors(&stats);
            prop_assert!(f.scale_r >= 1.0);
            prop_assert!(f.scale_b <= 1.0);
            if m[0] < m[1] && m[1] < m[2] {
                prop_assert!(f.scale_r > 1.0 && f.scale_b < 1.0);
            }
        }

        #[test]
        fn largest_mean_gets_smallest_gain(m in arb_means(), perm in 0usize..6) {
            prop_assume!(m[0] != m[1] && m[1] != m[2] && m[0] != m[2]);
            const PERMS: [[usize; 3]; 6] = [[0,1,2],[0,2,1],[1,0,2],[1,2,0],[2,0,1],[2,1,0]];
            let p = PERMS[perm];
            let means = [m[p[0]], m[p[1]], m[p[2]]];
            let f = scale_factors(&ChannelStats::from_means(means[0], means[1], means[2]));
            let s = f.as_array();
            let argmax_mean = (0..3).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
            let argmin_scale = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
            prop_assert_eq!(argmax_mean, argmin_scale);
        }

        #[test]
        fn second_pass_is_near_identity(seed in any::<u64>(), w in 1u32..16, h in 1u32..16) {
            let mut x = seed | 1;
            let mut next = || { x ^= x << 13; x ^= x >> 7; x ^= x << 17; (x >> 11) as f64 / (1u64 << 53) as f64 };
            let base = [0.2 + 0.1 * next(), 0.3 + 0.1 * next(), 0.4 + 0.1 * next()];
            let data: Vec<f64> = (0..(w * h) as usize).flat_map(|_| base.map(|b| b * (0.8 + 0.4 * next()))).collect();
            let img = FloatImage::new(w, h, data).unwrap();
            let (once, rep) = stabilize_float(&img, false);
            prop_assume!(rep.clipped_fraction == 0.0);
            let means = channel_means_float(&once).means();
            prop_assert!((means[0] - means[1]).abs() <= 1e-6 && (means[1] - means[2]).abs() <= 1e-6);
            let (_, rep2) = stabilize_float(&once, false);
            for s in [rep2.scale_r, rep2.scale_g, rep2.scale_b] {
                prop_assert!((s - 1.0).abs() <= 1e-6);
            }
            prop_assert!(channel_means_float(&once).dispersion() <= 1e-6);
        }
    }
}

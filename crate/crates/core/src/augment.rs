//! Unsharp-mask sharpening and geometric augmentations (horizontal flip,
//! broken mirror, crop).
//!
//! Geometric operations are deterministic in their parameters and return a
//! [`TransformRecord`] that the annotations module replays onto boxes.

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::imagecore::{FloatImage, Image, CHANNELS};

pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_AMOUNT: f64 = 1.5;

/// Pixel rectangle used by [`crop`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    None,
    Hflip,
    BrokenMirror { split_col: u32 },
    Crop { x: u32, y: u32, w: u32, h: u32 },
}

/// A geometric operation together with the image size it was applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformRecord {
    #[serde(flatten)]
    pub kind: TransformKind,
    pub image_width: u32,
    pub image_height: u32,
}

impl TransformRecord {
    /// Image size after the transform.
    pub fn output_size(&self) -> (u32, u32) {
        match self.kind {
            TransformKind::Crop { w, h, .. } => (w, h),
            _ => (self.image_width, self.image_height),
        }
    }

    /// Checks that the parameters fit inside the pre-transform image.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            TransformKind::None | TransformKind::Hflip => true,
            TransformKind::BrokenMirror { split_col } => split_col <= self.image_width,
            TransformKind::Crop { x, y, w, h } => {
                w >= 1
                    && h >= 1
                    && u64::from(x) + u64::from(w) <= u64::from(self.image_width)
                    && u64::from(y) + u64::from(h) <= u64::from(self.image_height)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "transform {:?} exceeds {}x{} image",
                self.kind, self.image_width, self.image_height
            )))
        }
    }

    /// Short name used for output-file suffixes.
    pub fn name(&self) -> &'static str {
        match self.kind {
            TransformKind::None => "none",
            TransformKind::Hflip => "hflip",
            TransformKind::BrokenMirror { .. } => "broken_mirror",
            TransformKind::Crop { .. } => "crop",
        }
    }
}

/// Normalized 1-D Gaussian with radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &FloatImage, sigma: f64) -> FloatImage {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.data();
    let idx = |x: i64, y: i64| (y * w + x) as usize * CHANNELS;

    let mut horiz = vec![0.0; src.len()];
    for y in 0..h {
        let row = &src[idx(0, y)..idx(0, y) + w as usize * CHANNELS];
        for x in 0..w {
            let mut acc = [0.0; CHANNELS];
            if x >= radius && x + radius < w {
                let taps = &row[(x - radius) as usize * CHANNELS..(x + radius + 1) as usize * CHANNELS];
                for (px, &wk) in taps.chunks_exact(CHANNELS).zip(&kernel) {
                    for c in 0..CHANNELS {
                        acc[c] += wk * px[c];
                    }
                }
            } else {
                for (k, &wk) in kernel.iter().enumerate() {
                    let sx = (x + k as i64 - radius).clamp(0, w - 1) as usize * CHANNELS;
                    for c in 0..CHANNELS {
                        acc[c] += wk * row[sx + c];
                    }
                }
            }
            horiz[idx(x, y)..idx(x, y) + CHANNELS].copy_from_slice(&acc);
        }
    }

    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for (k, &wk) in kernel.iter().enumerate() {
            let sy = (y + k as i64 - radius).clamp(0, h - 1);
            let src_row = &horiz[idx(0, sy)..idx(0, sy) + w as usize * CHANNELS];
            let dst_row = &mut out[idx(0, y)..idx(0, y) + w as usize * CHANNELS];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += wk * s;
            }
        }
    }
    FloatImage::new(img.width(), img.height(), out).expect("blur preserves dimensions")
}

fn check_sharpen_params(sigma: f64, amount: f64) -> Result<()> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    if !amount.is_finite() || amount < 0.0 {
        return Err(Error::InvalidParameter(format!("amount must be >= 0, got {amount}")));
    }
    Ok(())
}

/// Unsharp mask `clamp(I + amount * (I - blur(I)))` in working space.
pub fn sharpen_float(img: &FloatImage, sigma: f64, amount: f64) -> Result<FloatImage> {
    check_sharpen_params(sigma, amount)?;
    if amount == 0.0 {
        return Ok(img.clone());
    }
    let blurred = gaussian_blur(img, sigma);
    let mut out = img.clone();
    for (v, b) in out.data_mut().iter_mut().zip(blurred.data()) {
        *v = (*v + amount * (*v - b)).clamp(0.0, 1.0);
    }
    Ok(out)
}

pub fn sharpen(img: &Image, sigma: f64, amount: f64) -> Result<Image> {
    Ok(sharpen_float(&img.to_float(), sigma, amount)?.to_u8())
}

fn record(img: &Image, kind: TransformKind) -> TransformRecord {
    TransformRecord {
        kind,
        image_width: img.width(),
        image_height: img.height(),
    }
}

/// Mirrors columns: `j -> width - 1 - j`.
pub fn hflip(img: &Image) -> (Image, TransformRecord) {
    let row_len = img.width() as usize * CHANNELS;
    let mut data = Vec::with_capacity(img.data().len());
    for row in img.data().chunks_exact(row_len) {
        for px in row.chunks_exact(CHANNELS).rev() {
            data.extend_from_slice(px);
        }
    }
    let out = Image::new(img.width(), img.height(), data).expect("flip preserves dimensions");
    (out, record(img, TransformKind::Hflip))
}

/// Splits at `split_col` and reverses the row order within each side.
pub fn broken_mirror(img: &Image, split_col: u32) -> Result<(Image, TransformRecord)> {
    let rec = record(img, TransformKind::BrokenMirror { split_col });
    rec.validate()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let split = split_col as usize * CHANNELS;
    let row_len = w * CHANNELS;
    let src = img.data();
    let mut data = vec![0u8; src.len()];
    for y in 0..h {
        let flipped = (h - 1 - y) * row_len;
        let dst = y * row_len;
        data[dst..dst + split].copy_from_slice(&src[flipped..flipped + split]);
        data[dst + split..dst + row_len].copy_from_slice(&src[flipped + split..flipped + row_len]);
    }
    Ok((Image::new(img.width(), img.height(), data)?, rec))
}

pub fn crop(img: &Image, rect: CropRect) -> Result<(Image, TransformRecord)> {
    let rec = record(
        img,
        TransformKind::Crop {
            x: rect.x,
            y: rect.y,
            w: rect.w,
            h: rect.h,
        },
    );
    rec.validate()?;
    let row_len = img.width() as usize * CHANNELS;
    let mut data = Vec::with_capacity(rect.w as usize * rect.h as usize * CHANNELS);
    for y in rect.y..rect.y + rect.h {
        let start = y as usize * row_len + rect.x as usize * CHANNELS;
        data.extend_from_slice(&img.data()[start..start + rect.w as usize * CHANNELS]);
    }
    Ok((Image::new(rect.w, rect.h, data)?, rec))
}

/// Mirrors a box horizontally inside an image of the given width.
pub fn hflip_box(b: BBox, image_width: f64) -> Result<BBox> {
    if !(b.w > 0.0 && b.h > 0.0 && b.x >= 0.0 && b.right() <= image_width) {
        return Err(Error::InvalidParameter(format!(
            "box {b:?} is not inside width {image_width}"
        )));
    }
    Ok(BBox::new(image_width - b.x - b.w, b.y, b.w, b.h))
}

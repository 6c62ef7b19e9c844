//! RGB image buffers: 8-bit storage, a normalized `f64` working view, and
//! PNG/JPEG codec I/O.
//!
//! All enhancement math runs on [`FloatImage`] and is quantized back to
//! [`Image`] once per stage.

use std::io::BufWriter;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageEncoder, ImageReader};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// 8-bit RGB raster, row-major, interleaved `R,G,B`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

/// Floating-point RGB raster in the same layout as [`Image`], nominally in `[0,1]`.
///
/// Intermediate values may leave `[0,1]` (e.g. after channel scaling);
/// [`FloatImage::to_u8`] clamps.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

fn check_dims(width: u32, height: u32, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!(
            "zero dimension {width}x{height}"
        )));
    }
    let expected = width as usize * height as usize * CHANNELS;
    if len != expected {
        return Err(Error::InvalidImage(format!(
            "buffer length {len} does not match {width}x{height}x{CHANNELS} = {expected}"
        )));
    }
    Ok(())
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Image filled with a single color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        let data = rgb.iter().copied().cycle().take(n * CHANNELS).collect();
        Image::new(width, height, data)
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Exact conversion `v / 255`.
    pub fn to_float(&self) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
        }
    }
}

/// Quantizes one working-space sample: scale by 255, round half away from
/// zero, clamp to `[0,255]`. NaN maps to 0.
#[inline]
pub fn quantize(v: f64) -> u8 {
    let s = (v * 255.0).round();
    if s >= 255.0 {
        255
    } else if s > 0.0 {
        s as u8
    } else {
        0
    }
}

impl FloatImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        Ok(FloatImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copies channel `c` (0 = R, 1 = G, 2 = B) into a contiguous plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        assert!(c < CHANNELS, "channel index {c} out of range");
        self.data.iter().skip(c).step_by(CHANNELS).copied().collect()
    }

    /// Overwrites channel `c` from a contiguous plane.
    pub fn set_channel(&mut self, c: usize, plane: &[f64]) {
        assert!(c < CHANNELS, "channel index {c} out of range");
        assert_eq!(plane.len(), self.pixel_count(), "plane length mismatch");
        for (dst, &src) in self.data.iter_mut().skip(c).step_by(CHANNELS).zip(plane) {
            *dst = src;
        }
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// `v * 255`, rounded half away from zero, clamped to `[0,255]`.
    pub fn to_u8(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| quantize(v)).collect(),
        }
    }
}

/// Decodes a PNG or JPEG file into a 3-channel image.
///
/// Grayscale is replicated across R,G,B and alpha is dropped. Samples wider
/// than 8 bits are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (width, height) = (decoded.width(), decoded.height());
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!(
            "{} has zero dimension",
            path.display()
        )));
    }
    let rgb = match decoded {
        DynamicImage::ImageRgb8(buf) => buf,
        img @ (DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgba8(_)) => img.to_rgb8(),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    Image::new(width, height, rgb.into_raw())
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = image::codecs::png::PngEncoder::new(BufWriter::new(file));
    encoder
        .write_image(img.data(), img.width(), img.height(), ColorType::Rgb8.into())
        .map_err(|e| Error::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

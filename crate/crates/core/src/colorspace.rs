//! sRGB <-> CIELab (D65, 2° observer).
//!
//! Forward: sRGB transfer function -> linear RGB -> XYZ -> Lab. The inverse
//! clamps linear RGB to `[0,1]` before re-encoding, so out-of-gamut Lab
//! values still produce valid pixels.

use crate::error::{Error, Result};
use crate::imagecore::{FloatImage, Image, CHANNELS};

// Linear sRGB -> XYZ, derived from the sRGB primaries and the D65 chromaticity.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4123907992659594, 0.35758433938387796, 0.1804807884018343],
    [0.2126390058715103, 0.7151686787677559, 0.07219231536073371],
    [0.019330818715591825, 0.11919477979462596, 0.9505321522496607],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2409699419045213, -1.5373831775700932, -0.4986107602930032],
    [-0.9692436362808794, 1.8759675015077202, 0.04155505740717556],
    [0.055630079696993594, -0.20397695888897646, 1.0569715142428784],
];

// Reference white is the image of RGB (1,1,1) so white maps to a = b = 0 exactly.
const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

pub const L_MAX: f64 = 100.0;
pub const AB_MIN: f64 = -128.0;
pub const AB_MAX: f64 = 127.0;

/// CIELab raster stored as three planes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    width: u32,
    height: u32,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabImage {
    pub fn new(width: u32, height: u32, l: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = width as usize * height as usize;
        if n == 0 {
            return Err(Error::InvalidImage(format!("zero dimension {width}x{height}")));
        }
        if l.len() != n || a.len() != n || b.len() != n {
            return Err(Error::InvalidImage(format!(
                "Lab plane lengths ({}, {}, {}) do not match {width}x{height}",
                l.len(),
                a.len(),
                b.len()
            )));
        }
        Ok(LabImage { width, height, l, a, b })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.l.len()
    }
}

#[inline]
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(f: f64) -> f64 {
    let f3 = f * f * f;
    if f3 > EPSILON {
        f3
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

#[inline]
fn mul(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Converts one gamma-encoded sRGB triple in `[0,1]` to `(L, a, b)`.
pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c.clamp(0.0, 1.0)));
    let xyz = mul(&RGB_TO_XYZ, lin);
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [
        (116.0 * fy - 16.0).clamp(0.0, L_MAX),
        500.0 * (fx - fy),
        200.0 * (fy - fz),
    ]
}

/// Converts one Lab triple back to gamma-encoded sRGB in `[0,1]`.
pub fn lab_pixel_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        lab_f_inv(fx) * WHITE[0],
        lab_f_inv(fy) * WHITE[1],
        lab_f_inv(fz) * WHITE[2],
    ];
    mul(&XYZ_TO_RGB, xyz).map(|c| linear_to_srgb(c.clamp(0.0, 1.0)))
}

pub fn rgb_to_lab(img: &Image) -> LabImage {
    rgb_to_lab_float(&img.to_float())
}

/// Lab conversion of a working-space image; samples are clamped to `[0,1]` first.
pub fn rgb_to_lab_float(img: &FloatImage) -> LabImage {
    let n = img.pixel_count();
    let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.data().chunks_exact(CHANNELS) {
        let lab = srgb_pixel_to_lab([px[0], px[1], px[2]]);
        l.push(lab[0]);
        a.push(lab[1]);
        b.push(lab[2]);
    }
    LabImage {
        width: img.width(),
        height: img.height(),
        l,
        a,
        b,
    }
}

pub fn lab_to_rgb(lab: &LabImage) -> Image {
    lab_to_rgb_float(lab).to_u8()
}

pub fn lab_to_rgb_float(lab: &LabImage) -> FloatImage {
    let mut data = Vec::with_capacity(lab.pixel_count() * CHANNELS);
    for i in 0..lab.pixel_count() {
        data.extend_from_slice(&lab_pixel_to_srgb([lab.l[i], lab.a[i], lab.b[i]]));
    }
    FloatImage::new(lab.width, lab.height, data).expect("dimensions carried from a valid LabImage")
}

//! Float RGB images plus 8-bit PNG and PFM encoding.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Linear,
    Gamma,
}

/// Row-major `width x height` RGB image of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub space: ColorSpace,
    pub data: Vec<Vec3>,
}

impl Image {
    pub fn new(width: usize, height: usize, space: ColorSpace) -> Self {
        Image {
            width,
            height,
            space,
            data: vec![Vec3::zeros(); width * height],
        }
    }

    pub fn filled(width: usize, height: usize, space: ColorSpace, value: Vec3) -> Self {
        Image {
            width,
            height,
            space,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, space: ColorSpace, mut f: impl FnMut(usize, usize) -> Vec3) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            space,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Vec3) {
        self.data[y * self.width + x] = v;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max))
    }

    /// Channel-wise lower clamp, applied to training references.
    pub fn clamp_min(&mut self, min: f64) {
        for p in &mut self.data {
            *p = p.map(|v| v.max(min));
        }
    }

    /// Round to the nearest 8-bit level (the values a PNG round trip yields).
    pub fn quantized(&self) -> Image {
        Image {
            data: self.data.iter().map(|p| p.map(|v| quantize(v) as f64 / 255.0)).collect(),
            ..self.clone()
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().flat_map(|p| [quantize(p.x), quantize(p.y), quantize(p.z)]).collect()
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::format(path, "image buffer size mismatch"))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::format(path, e))
    }

    /// Load an 8-bit PNG as a gamma-space image in `[0, 1]`.
    pub fn read_png(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| Error::format(path, format!("cannot decode PNG: {e}")))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .pixels()
            .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect();
        Ok(Image {
            width: w as usize,
            height: h as usize,
            space: ColorSpace::Gamma,
            data,
        })
    }

    /// Little-endian 32-bit float PFM dump (bottom row first, per the format).
    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(32 + self.data.len() * 12);
        write!(out, "PF\n{} {}\n-1.0\n", self.width, self.height).expect("write to Vec");
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                for v in self.get(x, y).iter() {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Display transform `clamp(x, 0, 1)^(1 / gamma)`.
#[inline]
pub fn gamma_encode(x: f64, gamma: f64) -> f64 {
    let c = x.clamp(0.0, 1.0);
    if gamma == 1.0 {
        c
    } else {
        c.powf(1.0 / gamma)
    }
}

/// Derivative of [`gamma_encode`]; zero in the clamped regions.
#[inline]
pub fn gamma_derivative(x: f64, gamma: f64) -> f64 {
    if !(x > 0.0 && x < 1.0) {
        return 0.0;
    }
    if gamma == 1.0 {
        1.0
    } else {
        x.powf(1.0 / gamma - 1.0) / gamma
    }
}

pub fn encode_gamma(linear: &Image, gamma: f64) -> Image {
    Image {
        width: linear.width,
        height: linear.height,
        space: ColorSpace::Gamma,
        data: linear.data.iter().map(|p| p.map(|v| gamma_encode(v, gamma))).collect(),
    }
}

//! Row-major pixel buffers.

use std::ops::{Add, Mul};

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type RgbImage = Image<Rgb>;
pub type ScalarImage = Image<f64>;
pub type NormalImage = Image<Vec3>;

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Image<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> &[T] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl<T> Image<T>
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    /// Bilinear read at continuous pixel-index coordinates (pixel `i` is
    /// centered on `i`), clamped to the border.
    pub fn bilinear(&self, u: f64, v: f64) -> T {
        let fx = u.clamp(0.0, (self.width - 1) as f64);
        let fy = v.clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let top = *self.get(x0, y0) * (1.0 - tx) + *self.get(x1, y0) * tx;
        let bottom = *self.get(x0, y1) * (1.0 - tx) + *self.get(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Whether pixel values are unbounded radiance or display-range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueRange {
    Hdr,
    Ldr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub pixels: RgbImage,
    pub range: ValueRange,
}

impl RenderedImage {
    pub fn hdr(pixels: RgbImage) -> Self {
        Self {
            pixels,
            range: ValueRange::Hdr,
        }
    }

    pub fn ldr(pixels: RgbImage) -> Self {
        Self {
            pixels,
            range: ValueRange::Ldr,
        }
    }

    /// Checks the range tag against the values: LDR in `[0,1]`, HDR nonnegative.
    pub fn validate(&self) -> Result<()> {
        let hi = match self.range {
            ValueRange::Ldr => 1.0,
            ValueRange::Hdr => f64::INFINITY,
        };
        for p in self.pixels.pixels() {
            if p.iter().any(|&c| !(c >= 0.0 && c <= hi)) {
                return Err(Error::Invalid(format!("pixel {p:?} outside {:?} range", self.range)));
            }
        }
        Ok(())
    }
}

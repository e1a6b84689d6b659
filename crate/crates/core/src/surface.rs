//! Per-pixel intrinsic buffers seen by a pinhole camera.

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{NormalImage, RgbImage, ScalarImage};
use crate::math::{Rgb, Vec3};

/// Albedo in `[0,1]³`, unit world-space normal and positive camera z-depth
/// in meters, all at the same resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceBuffers {
    pub albedo: RgbImage,
    pub normal: NormalImage,
    pub depth: ScalarImage,
}

impl SurfaceBuffers {
    pub fn new(albedo: RgbImage, normal: NormalImage, depth: ScalarImage) -> Result<Self> {
        let s = Self { albedo, normal, depth };
        s.check_shape()?;
        Ok(s)
    }

    pub fn uniform(width: usize, height: usize, albedo: Rgb, normal: Vec3, depth: f64) -> Self {
        Self {
            albedo: RgbImage::filled(width, height, albedo),
            normal: NormalImage::filled(width, height, normal.normalize()),
            depth: ScalarImage::filled(width, height, depth),
        }
    }

    pub fn width(&self) -> usize {
        self.albedo.width()
    }

    pub fn height(&self) -> usize {
        self.albedo.height()
    }

    pub fn len(&self) -> usize {
        self.albedo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.albedo.is_empty()
    }

    fn check_shape(&self) -> Result<()> {
        if !self.albedo.same_dims(&self.normal) || !self.albedo.same_dims(&self.depth) {
            return Err(Error::Shape(format!(
                "surface buffers disagree: albedo {:?}, normal {:?}, depth {:?}",
                self.albedo.dims(),
                self.normal.dims(),
                self.depth.dims()
            )));
        }
        Ok(())
    }

    pub fn check_camera(&self, camera: &Camera) -> Result<()> {
        if self.width() != camera.width || self.height() != camera.height {
            return Err(Error::Shape(format!(
                "surface buffers are {}x{} but the camera is {}x{}",
                self.width(),
                self.height(),
                camera.width,
                camera.height
            )));
        }
        Ok(())
    }

    /// Full invariant check.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        for (i, a) in self.albedo.pixels().iter().enumerate() {
            if a.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::Invalid(format!("albedo at pixel {i} outside [0,1]")));
            }
        }
        for (i, n) in self.normal.pixels().iter().enumerate() {
            if !((n.norm() - 1.0).abs() <= 1e-6) {
                return Err(Error::Invalid(format!("normal at pixel {i} is not unit length")));
            }
        }
        for (i, d) in self.depth.pixels().iter().enumerate() {
            if !(*d > 0.0 && d.is_finite()) {
                return Err(Error::Invalid(format!("depth at pixel {i} must be positive, got {d}")));
            }
        }
        Ok(())
    }

    /// World position of pixel `i` (linear index).
    pub fn position(&self, camera: &Camera, i: usize) -> Vec3 {
        let u = (i % self.width()) as f64;
        let v = (i / self.width()) as f64;
        camera.unproject(u, v, self.depth.pixels()[i])
    }
}

//! Pinhole camera. Camera space is right-handed with +x right, +y down and
//! +z forward. Pixel `(u, v)` covers `[u, u+1) × [v, v+1)` and its center is
//! at `(u + 0.5, v + 0.5)`. Depth buffers hold camera-space z in meters.

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::volume::Ray;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose from a row-major 3×3 matrix, rejecting anything that is
    /// not a proper rotation to within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > 1e-9 || (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid("camera rotation is not orthonormal with det +1".into()));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(m),
            translation,
        })
    }

    /// Camera at `eye` looking toward `target`; `down` fixes the image +y direction.
    pub fn look_at(eye: Vec3, target: Vec3, down: Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let m = Matrix3::from_columns(&[x, y, z]);
        Self {
            rotation: Rotation3::from_matrix_unchecked(m),
            translation: eye,
        }
    }
}

/// File form of a camera: intrinsics, resolution and a camera-to-world pose
/// with a row-major rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl TryFrom<CameraConfig> for Camera {
    type Error = Error;

    fn try_from(c: CameraConfig) -> Result<Self> {
        let r = &c.rotation;
        let m = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        let pose = Pose::from_matrix(m, Vec3::from(c.translation))?;
        Camera::new(
            Intrinsics {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
            },
            c.width,
            c.height,
            pose,
        )
    }
}

impl From<Camera> for CameraConfig {
    fn from(c: Camera) -> Self {
        let m = c.pose.rotation.matrix();
        CameraConfig {
            fx: c.intrinsics.fx,
            fy: c.intrinsics.fy,
            cx: c.intrinsics.cx,
            cy: c.intrinsics.cy,
            width: c.width,
            height: c.height,
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: c.pose.translation.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraConfig", into = "CameraConfig")]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, width: usize, height: usize, pose: Pose) -> Result<Self> {
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(Error::Invalid("focal lengths must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Invalid("camera resolution must be positive".into()));
        }
        Ok(Self {
            intrinsics,
            width,
            height,
            pose,
        })
    }

    /// Symmetric camera with the given horizontal field of view in radians.
    pub fn with_fov(width: usize, height: usize, hfov: f64, pose: Pose) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov).tan();
        Self {
            intrinsics: Intrinsics {
                fx: f,
                fy: f,
                cx: 0.5 * width as f64,
                cy: 0.5 * height as f64,
            },
            width,
            height,
            pose,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }

    pub fn forward(&self) -> Vec3 {
        self.pose.rotation * Vec3::z()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.pose.rotation.inverse() * (p - self.pose.translation)
    }

    pub fn camera_to_world(&self, q: &Vec3) -> Vec3 {
        self.pose.rotation * q + self.pose.translation
    }

    /// Camera-space direction through pixel `(u, v)` with unit z.
    pub fn pixel_direction_camera(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new((u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0)
    }

    pub fn pixel_to_ray(&self, u: f64, v: f64) -> Ray {
        let d = self.pose.rotation * self.pixel_direction_camera(u, v);
        Ray::new(self.pose.translation, d)
    }

    /// World point seen at pixel `(u, v)` with camera-space depth `z`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        self.camera_to_world(&(self.pixel_direction_camera(u, v) * z))
    }

    /// Pixel-index coordinates and camera-space depth of a world point, or
    /// `None` when the point is not in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let q = self.world_to_camera(p);
        if q.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * q.x / q.z + k.cx - 0.5, k.fy * q.y / q.z + k.cy - 0.5, q.z))
    }

    /// Whether pixel-index coordinates fall on the image.
    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }

    /// Ratio of camera-space z to distance along the ray of pixel `(u, v)`.
    pub fn z_per_distance(&self, u: f64, v: f64) -> f64 {
        1.0 / self.pixel_direction_camera(u, v).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn cam() -> Camera {
        Camera::new(
            Intrinsics {
                fx: 50.0,
                fy: 50.0,
                cx: 40.0,
                cy: 30.0,
            },
            80,
            60,
            Pose::identity(),
        )
        .unwrap()
    }

    #[test]
    fn principal_point_is_optical_axis() {
        let r = cam().pixel_to_ray(39.5, 29.5);
        assert!((r.direction - Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn focal_offset_is_45_degrees() {
        let r = cam().pixel_to_ray(39.5 + 50.0, 29.5);
        let az = r.direction.x.atan2(r.direction.z);
        assert!((az - FRAC_PI_4).abs() < 1e-12);
        assert_eq!(r.direction.y, 0.0);
    }

    #[test]
    fn project_inverts_unproject() {
        let pose = Pose::look_at(Vec3::new(0.3, -0.2, 0.1), Vec3::new(1.0, 0.5, 2.0), Vec3::y());
        let c = Camera { pose, ..cam() };
        for &(u, v, z) in &[(0.0, 0.0, 1.0), (13.25, 47.5, 2.5), (79.9, 59.9, 0.3), (-4.0, 70.0, 7.0)] {
            let p = c.unproject(u, v, z);
            let (pu, pv, pz) = c.project(&p).unwrap();
            assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6 && (pz - z).abs() < 1e-9);
        }
    }

    #[test]
    fn behind_camera_does_not_project() {
        assert!(cam().project(&Vec3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn json_round_trip() {
        let pose = Pose::look_at(Vec3::new(0.3, -0.2, 0.1), Vec3::new(1.0, 0.5, 2.0), Vec3::y());
        let c = Camera { pose, ..cam() };
        let s = serde_json::to_string(&c).unwrap();
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
        assert!((back.pose.rotation.matrix() - c.pose.rotation.matrix()).abs().max() < 1e-15);
    }

    #[test]
    fn rejects_bad_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::from_matrix(m, Vec3::zeros()).is_err());
    }
}

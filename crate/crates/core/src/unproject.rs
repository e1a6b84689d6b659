//! Visible-surface unprojection into the voxel grid.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::image::RgbImage;
use crate::math::Vec3;
use crate::surface::SurfaceBuffers;
use crate::volume::Aabb;

/// Depth tolerance of the Gaussian surface weight, meters.
pub const SIGMA_D: f64 = 0.15;

pub const FEATURE_CHANNELS: usize = 9;

/// Per-voxel features `(k·I, k·N, k·A)`, same layout as a [`crate::VsgVolume`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub dims: [usize; 3],
    pub bounds: Aabb,
    pub features: Vec<[f64; FEATURE_CHANNELS]>,
}

impl FeatureGrid {
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn voxel_center(&self, i: usize) -> Vec3 {
        voxel_center(self.dims, &self.bounds, i)
    }
}

fn voxel_center(dims: [usize; 3], bounds: &Aabb, i: usize) -> Vec3 {
    let x = i % dims[0];
    let y = (i / dims[0]) % dims[1];
    let z = i / (dims[0] * dims[1]);
    let c = Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5);
    bounds.min + bounds.extent.component_div(&Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64)).component_mul(&c)
}

/// Surface weight `exp(-(d - D)² / (2σ_d²))`.
pub fn surface_weight(d: f64, surface_depth: f64) -> f64 {
    let e = d - surface_depth;
    (-e * e / (2.0 * SIGMA_D * SIGMA_D)).exp()
}

/// Projects every voxel center into the image and writes the weighted image,
/// normal and albedo at that pixel. Buffers are read bilinearly and normals
/// renormalized; `d` is the voxel's camera z-depth.
pub fn unproject_visible(
    image: &RgbImage,
    surf: &SurfaceBuffers,
    camera: &Camera,
    dims: [usize; 3],
    bounds: &Aabb,
) -> FeatureGrid {
    let n = dims[0] * dims[1] * dims[2];
    let features = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut f = [0.0; FEATURE_CHANNELS];
            let p = voxel_center(dims, bounds, i);
            let Some((u, v, d)) = camera.project(&p) else {
                return f;
            };
            if !camera.in_image(u, v) {
                return f;
            }
            let k = surface_weight(d, surf.depth.bilinear(u, v));
            let rgb = image.bilinear(u, v);
            let nrm = surf.normal.bilinear(u, v);
            let nrm = if nrm.norm() > 0.0 { nrm.normalize() } else { nrm };
            let alb = surf.albedo.bilinear(u, v);
            for c in 0..3 {
                f[c] = k * rgb[c];
                f[3 + c] = k * nrm[c];
                f[6 + c] = k * alb[c];
            }
            f
        })
        .collect();
    FeatureGrid {
        dims,
        bounds: *bounds,
        features,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::math::Rgb;

    fn setup() -> (RgbImage, SurfaceBuffers, Camera) {
        let cam = Camera::with_fov(8, 8, 1.2, Pose::identity());
        let img = RgbImage::filled(8, 8, Rgb::new(0.2, 0.4, 0.6));
        let surf = SurfaceBuffers::uniform(8, 8, Rgb::new(0.5, 0.5, 0.5), -Vec3::z(), 2.0);
        (img, surf, cam)
    }

    #[test]
    fn on_surface_voxel_copies_pixel() {
        let (img, surf, cam) = setup();
        // 1×1×1 grid whose center sits on the optical axis at z = 2
        let b = Aabb::centered(Vec3::new(0.0, 0.0, 2.0), 0.1);
        let g = unproject_visible(&img, &surf, &cam, [1, 1, 1], &b);
        let f = g.features[0];
        assert!((f[0] - 0.2).abs() < 1e-12 && (f[5] + 1.0).abs() < 1e-12 && (f[8] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_sigma_off_surface() {
        let (img, surf, cam) = setup();
        let b = Aabb::centered(Vec3::new(0.0, 0.0, 2.0 + SIGMA_D), 0.1);
        let g = unproject_visible(&img, &surf, &cam, [1, 1, 1], &b);
        assert!((g.features[0][6] - 0.5 * (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_zero() {
        let (img, surf, cam) = setup();
        let b = Aabb::centered(Vec3::new(0.0, 0.0, -2.0), 0.1);
        let g = unproject_visible(&img, &surf, &cam, [1, 1, 1], &b);
        assert_eq!(g.features[0], [0.0; FEATURE_CHANNELS]);
    }
}

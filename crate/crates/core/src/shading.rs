//! Lambertian re-rendering against a VSG volume, soft HDR clipping,
//! panorama and perspective renders, and virtual sphere insertion.
//!
//! A pixel with albedo `A` and normal `N` renders as `φ((A/π) ⊙ S)` with
//! shading `S = Σ_l R(p, l)·max(l·N, 0)·ΔΩ`, where `R` is the composited
//! incident radiance at the pixel's surface point.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::composite::{composite_radiance, depth_batch, radiance_batch, radiance_batch_backward, MarchConfig};
use crate::error::Result;
use crate::image::{RenderedImage, RgbImage, ScalarImage};
use crate::math::{Rgb, Vec3};
use crate::quadrature::{fibonacci_hemisphere, fibonacci_hemisphere_twisted, pixel_twist, QuadratureGrid};
use crate::surface::SurfaceBuffers;
use crate::volume::{Ray, VoxelRecord, VsgVolume};

pub const DEFAULT_TAU: f64 = 0.9;

/// `x` up to `τ`, then `1 - (1-τ)·exp(-(x-τ)/(1-τ))`.
pub fn soft_clip(x: f64, tau: f64) -> f64 {
    if x <= tau {
        x
    } else {
        1.0 - (1.0 - tau) * (-(x - tau) / (1.0 - tau)).exp()
    }
}

pub fn soft_clip_grad(x: f64, tau: f64) -> f64 {
    if x <= tau {
        1.0
    } else {
        (-(x - tau) / (1.0 - tau)).exp()
    }
}

pub fn soft_clip_rgb(x: &Rgb, tau: f64) -> Rgb {
    x.map(|c| soft_clip(c, tau))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadingOptions {
    /// Lattice directions per pixel.
    pub k: usize,
    /// Also use the directions of the 8 neighboring pixels.
    pub share_neighbors: bool,
    pub march: MarchConfig,
    /// Query rays skip the part of their path closer to the surface plane
    /// than this many voxel edges.
    pub surface_offset: f64,
    pub tau: f64,
}

impl Default for ShadingOptions {
    fn default() -> Self {
        Self {
            k: 50,
            share_neighbors: false,
            march: MarchConfig::default(),
            surface_offset: 1.0,
            tau: DEFAULT_TAU,
        }
    }
}

/// Default re-rendering resolution `(width, height)`.
pub const DEFAULT_RESOLUTION: (usize, usize) = (80, 60);

/// Surface points and lattice directions for every pixel, fixed once from a
/// reference set of surface buffers. Shading later re-evaluates the cosine
/// terms against whatever normals it is given.
///
/// Each lattice ray starts at its surface point but skips ahead to where it
/// is `offset` above the surface plane (at most `4·offset` along the ray), so
/// the surface's own voxels do not shadow it while directions still leave
/// from the true surface point.
#[derive(Clone, Debug)]
pub struct ShadingSetup {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub offset: f64,
    pub quadrature: QuadratureGrid,
    pub share_neighbors: bool,
}

impl ShadingSetup {
    pub fn new(surf: &SurfaceBuffers, camera: &Camera, volume: &VsgVolume, opts: &ShadingOptions) -> Result<Self> {
        surf.check_camera(camera)?;
        let n = surf.len();
        let normals: Vec<Vec3> = surf.normal.pixels().iter().map(|v| v.normalize()).collect();
        let points = (0..n).map(|i| surf.position(camera, i)).collect();
        let cells = (0..n)
            .map(|i| fibonacci_hemisphere_twisted(&normals[i], opts.k, pixel_twist(i)))
            .collect();
        Ok(Self {
            width: surf.width(),
            height: surf.height(),
            points,
            normals,
            offset: opts.surface_offset * volume.max_voxel_edge(),
            quadrature: QuadratureGrid {
                width: surf.width(),
                height: surf.height(),
                cells,
            },
            share_neighbors: opts.share_neighbors,
        })
    }

    /// Query ray of pixel `i` along its lattice direction `d`.
    pub fn ray(&self, i: usize, d: &Vec3) -> Ray {
        let c = d.dot(&self.normals[i]);
        let skip = if c * 4.0 > 1.0 { self.offset / c } else { 4.0 * self.offset };
        Ray::new(self.points[i] + d * skip, *d)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Pixels whose radiance queries pixel `i` reuses (itself first).
    pub fn sources(&self, i: usize) -> Vec<usize> {
        if self.share_neighbors {
            QuadratureGrid::neighborhood(self.width, self.height, i % self.width, i / self.width)
        } else {
            vec![i]
        }
    }

    pub fn delta_omega(&self, sources: &[usize]) -> f64 {
        let count: usize = sources.iter().map(|&j| self.quadrature.cells[j].len()).sum();
        2.0 * PI / count as f64
    }

    /// One ray per pixel and lattice direction, pixel-major.
    pub fn rays(&self) -> Vec<Ray> {
        let mut out = Vec::new();
        for (i, q) in self.quadrature.cells.iter().enumerate() {
            out.extend(q.directions.iter().map(|d| self.ray(i, d)));
        }
        out
    }

    /// Incident radiance for every pixel's own directions.
    pub fn radiance(&self, volume: &VsgVolume, march: &MarchConfig) -> Vec<Vec<Rgb>> {
        let flat = radiance_batch(&self.rays(), volume, march);
        let mut it = flat.into_iter();
        self.quadrature
            .cells
            .iter()
            .map(|q| it.by_ref().take(q.len()).collect())
            .collect()
    }
}

/// Output of [`shade_lambertian`].
#[derive(Clone, Debug)]
pub struct ShadingResult {
    pub ldr: RenderedImage,
    pub shading: RenderedImage,
    /// `∂S/∂N` per pixel; row `c` is the color channel, column `j` the normal component.
    pub jacobian: Vec<Matrix3<f64>>,
}

/// Shades with precomputed radiance (`radiance[i][j]` for pixel `i`, lattice direction `j`).
pub fn shade_with_setup(
    setup: &ShadingSetup,
    albedo: &[Rgb],
    normal: &[Vec3],
    radiance: &[Vec<Rgb>],
    tau: f64,
) -> ShadingResult {
    let n = setup.len();
    let per_pixel: Vec<(Rgb, Rgb, Matrix3<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let nrm = normal[i];
            let src = setup.sources(i);
            let dw = setup.delta_omega(&src);
            let mut s = Rgb::zeros();
            let mut jac = Matrix3::zeros();
            for &q in &src {
                for (l, r) in setup.quadrature.cells[q].directions.iter().zip(&radiance[q]) {
                    let c = l.dot(&nrm);
                    if c > 0.0 {
                        s += r * (c * dw);
                        jac += r * l.transpose() * dw;
                    }
                }
            }
            let ldr = soft_clip_rgb(&(albedo[i].component_mul(&s) / PI), tau);
            (ldr, s, jac)
        })
        .collect();
    let (w, h) = (setup.width, setup.height);
    ShadingResult {
        ldr: RenderedImage::ldr(RgbImage::from_fn(w, h, |x, y| per_pixel[y * w + x].0)),
        shading: RenderedImage::hdr(RgbImage::from_fn(w, h, |x, y| per_pixel[y * w + x].1)),
        jacobian: per_pixel.into_iter().map(|p| p.2).collect(),
    }
}

/// Lambertian re-render of `surf` under `volume`, with shading and its
/// normal Jacobian.
pub fn shade_lambertian(
    surf: &SurfaceBuffers,
    camera: &Camera,
    volume: &VsgVolume,
    opts: &ShadingOptions,
) -> Result<ShadingResult> {
    let setup = ShadingSetup::new(surf, camera, volume, opts)?;
    let radiance = setup.radiance(volume, &opts.march);
    Ok(shade_with_setup(
        &setup,
        surf.albedo.pixels(),
        surf.normal.pixels(),
        &radiance,
        opts.tau,
    ))
}

/// Gradients of a re-render with respect to albedo, normals and volume.
pub struct ShadingGrad {
    pub albedo: Vec<Rgb>,
    pub normal: Vec<Vec3>,
    pub volume: Vec<VoxelRecord>,
}

/// Reverse pass of [`shade_with_setup`] for upstream gradients `g_ldr` on the
/// LDR output. Volume gradients flow through every radiance query.
#[allow(clippy::too_many_arguments)]
pub fn shade_backward(
    setup: &ShadingSetup,
    albedo: &[Rgb],
    normal: &[Vec3],
    radiance: &[Vec<Rgb>],
    shading: &[Rgb],
    g_ldr: &[Rgb],
    volume: &VsgVolume,
    opts: &ShadingOptions,
) -> ShadingGrad {
    let n = setup.len();
    let mut d_albedo = vec![Rgb::zeros(); n];
    let mut d_normal = vec![Vec3::zeros(); n];
    let mut g_rad: Vec<Vec<Rgb>> = radiance.iter().map(|r| vec![Rgb::zeros(); r.len()]).collect();
    for i in 0..n {
        let s = shading[i];
        let x = albedo[i].component_mul(&s) / PI;
        let gx = Rgb::from_fn(|c, _| g_ldr[i][c] * soft_clip_grad(x[c], opts.tau));
        if gx.iter().all(|&v| v == 0.0) {
            continue;
        }
        d_albedo[i] = gx.component_mul(&s) / PI;
        let gs = gx.component_mul(&albedo[i]) / PI;
        let src = setup.sources(i);
        let dw = setup.delta_omega(&src);
        for &q in &src {
            let dirs = &setup.quadrature.cells[q].directions;
            for (j, l) in dirs.iter().enumerate() {
                let c = l.dot(&normal[i]);
                if c > 0.0 {
                    d_normal[i] += l * (gs.dot(&radiance[q][j]) * dw);
                    g_rad[q][j] += gs * (c * dw);
                }
            }
        }
    }
    let rays = setup.rays();
    let flat: Vec<Rgb> = g_rad.into_iter().flatten().collect();
    let mut d_volume = vec![[0.0; crate::volume::CHANNELS]; volume.len()];
    radiance_batch_backward(&rays, &flat, volume, &opts.march, &mut d_volume);
    ShadingGrad {
        albedo: d_albedo,
        normal: d_normal,
        volume: d_volume,
    }
}

/// Unit direction of continuous panorama coordinates in the panorama's
/// local frame. Column 0 starts at azimuth -π, row 0 at the zenith; the
/// zenith is local -y and azimuth 0 looks along +z.
pub fn panorama_direction(u: f64, v: f64, width: usize, height: usize) -> Vec3 {
    let phi = -PI + (u + 0.5) / width as f64 * 2.0 * PI;
    let theta = 0.5 * PI - (v + 0.5) / height as f64 * PI;
    Vec3::new(theta.cos() * phi.sin(), -theta.sin(), theta.cos() * phi.cos())
}

/// Inverse of [`panorama_direction`], in continuous pixel-index coordinates.
pub fn direction_to_panorama(d: &Vec3, width: usize, height: usize) -> (f64, f64) {
    let d = d.normalize();
    let phi = d.x.atan2(d.z);
    let theta = (-d.y).clamp(-1.0, 1.0).asin();
    let u = (phi + PI) / (2.0 * PI) * width as f64 - 0.5;
    let v = (0.5 * PI - theta) / PI * height as f64 - 0.5;
    (u, v)
}

pub fn panorama_rays(center: &Vec3, orientation: &Rotation3<f64>, width: usize, height: usize) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let d = orientation * panorama_direction(x as f64, y as f64, width, height);
            rays.push(Ray::new(*center, d));
        }
    }
    rays
}

/// Equirectangular render of the incident radiance at `center`; the
/// environment map at that point.
pub fn render_panorama(
    center: &Vec3,
    orientation: &Rotation3<f64>,
    volume: &VsgVolume,
    resolution: (usize, usize),
    clip: bool,
    march: &MarchConfig,
) -> RenderedImage {
    let (w, h) = resolution;
    let hdr = radiance_batch(&panorama_rays(center, orientation, w, h), volume, march);
    let img = RgbImage::from_vec(w, h, hdr).expect("panorama buffer size");
    if clip {
        RenderedImage::ldr(img.map(|p| soft_clip_rgb(p, DEFAULT_TAU)))
    } else {
        RenderedImage::hdr(img)
    }
}

/// One ray per pixel of `camera`, row-major.
pub fn camera_rays(camera: &Camera) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(camera.width * camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            rays.push(camera.pixel_to_ray(x as f64, y as f64));
        }
    }
    rays
}

/// Clipped composited color and camera z-depth for every pixel. Rays that
/// miss the bounds get depth 0.
pub fn render_perspective_from_volume(
    camera: &Camera,
    volume: &VsgVolume,
    march: &MarchConfig,
) -> (RenderedImage, ScalarImage) {
    let rays = camera_rays(camera);
    let rgb = radiance_batch(&rays, volume, march);
    let dist = depth_batch(&rays, volume, march);
    let (w, h) = (camera.width, camera.height);
    let ldr = RgbImage::from_fn(w, h, |x, y| soft_clip_rgb(&rgb[y * w + x], DEFAULT_TAU));
    let depth = ScalarImage::from_fn(w, h, |x, y| dist[y * w + x] * camera.z_per_distance(x as f64, y as f64));
    (RenderedImage::ldr(ldr), depth)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Material {
    Mirror,
    Diffuse(Rgb),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub material: Material,
}

impl Sphere {
    /// Nearest positive hit distance.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        if self.radius <= 0.0 {
            return None;
        }
        let oc = ray.origin - self.center;
        let b = oc.dot(&ray.direction);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let t0 = -b - sq;
        if t0 > 1e-9 {
            return Some(t0);
        }
        let t1 = -b + sq;
        (t1 > 1e-9).then_some(t1)
    }
}

/// Composites a mirror or diffuse sphere into an LDR image. Covered pixels
/// are shaded from the volume; other pixels get a cast shadow by
/// differential rendering, i.e. multiplied by the ratio of their shading
/// with and without the sphere blocking the lattice rays.
pub fn insert_sphere(
    image: &RenderedImage,
    camera: &Camera,
    surf: &SurfaceBuffers,
    volume: &VsgVolume,
    sphere: &Sphere,
    opts: &ShadingOptions,
) -> Result<RenderedImage> {
    surf.check_camera(camera)?;
    if !image.pixels.same_dims(&surf.albedo) {
        return Err(crate::Error::Shape("image and surface buffers differ in size".into()));
    }
    let behind = camera.world_to_camera(&sphere.center).z + sphere.radius <= 0.0;
    if sphere.radius <= 0.0 || behind {
        return Ok(image.clone());
    }
    let w = camera.width;
    let offset = opts.surface_offset * volume.max_voxel_edge();
    let out: Vec<Rgb> = (0..surf.len())
        .into_par_iter()
        .map(|i| {
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            let bg = image.pixels.pixels()[i];
            let ray = camera.pixel_to_ray(u, v);
            let surface_dist = surf.depth.pixels()[i] / camera.z_per_distance(u, v);
            if let Some(t) = sphere.intersect(&ray).filter(|&t| t < surface_dist) {
                let p = ray.at(t);
                let n = (p - sphere.center).normalize();
                let p_out = p + n * 1e-6;
                return match sphere.material {
                    Material::Mirror => {
                        let d = ray.direction;
                        let r = d - n * (2.0 * d.dot(&n));
                        soft_clip_rgb(&composite_radiance(&Ray::new(p_out, r), volume, &opts.march), opts.tau)
                    }
                    Material::Diffuse(albedo) => {
                        let q = fibonacci_hemisphere(&n, opts.k);
                        let mut s = Rgb::zeros();
                        for l in &q.directions {
                            let c = l.dot(&n);
                            if c > 0.0 {
                                s += composite_radiance(&Ray::new(p_out, *l), volume, &opts.march) * (c * q.delta_omega);
                            }
                        }
                        soft_clip_rgb(&(albedo.component_mul(&s) / PI), opts.tau)
                    }
                };
            }
            let nrm = surf.normal.pixels()[i].normalize();
            let p = surf.position(camera, i) + nrm * offset;
            let q = fibonacci_hemisphere_twisted(&nrm, opts.k, pixel_twist(i));
            if !q.directions.iter().any(|l| sphere.intersect(&Ray::new(p, *l)).is_some()) {
                return bg;
            }
            let mut with = Rgb::zeros();
            let mut without = Rgb::zeros();
            for l in &q.directions {
                let c = l.dot(&nrm);
                if c <= 0.0 {
                    continue;
                }
                let ray = Ray::new(p, *l);
                let r = composite_radiance(&ray, volume, &opts.march) * c;
                without += r;
                if sphere.intersect(&ray).is_none() {
                    with += r;
                }
            }
            Rgb::from_fn(|c, _| {
                if without[c] > 0.0 {
                    bg[c] * with[c] / without[c]
                } else {
                    bg[c]
                }
            })
        })
        .collect();
    Ok(RenderedImage::ldr(RgbImage::from_vec(w, camera.height, out)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::grad::one_sided_derivatives;
    use crate::volume::{Aabb, SphericalGaussian};

    #[test]
    fn soft_clip_values() {
        assert_eq!(soft_clip(0.5, 0.9), 0.5);
        assert!((soft_clip(1.0, 0.9) - (1.0 - 0.1 * (-1.0f64).exp())).abs() < 1e-15);
        assert!((soft_clip(1.0, 0.9) - 0.96321).abs() < 1e-5);
        assert!(soft_clip(1e6, 0.9) <= 1.0);
        let (l, r) = one_sided_derivatives(|x| soft_clip(x, 0.9), 0.9, 1e-8);
        assert!((l - 1.0).abs() < 1e-6 && (r - 1.0).abs() < 1e-6);
    }

    #[test]
    fn panorama_mapping_round_trip() {
        for &(u, v) in &[(0.0, 0.0), (17.3, 4.2), (63.0, 31.0), (31.5, 15.5)] {
            let d = panorama_direction(u, v, 64, 32);
            let (pu, pv) = direction_to_panorama(&d, 64, 32);
            assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
        }
        let up = panorama_direction(31.5, -0.5, 64, 32);
        assert!((up - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_albedo_renders_black() {
        let mut vol = VsgVolume::empty([4, 4, 4], Aabb::centered(Vec3::zeros(), 4.0)).unwrap();
        for i in 0..vol.len() {
            vol.set(i, 0.5, &SphericalGaussian::isotropic(Rgb::repeat(3.0)));
        }
        let cam = Camera::with_fov(4, 3, 1.0, Pose::identity());
        let surf = SurfaceBuffers::uniform(4, 3, Rgb::zeros(), -Vec3::z(), 1.0);
        let r = shade_lambertian(&surf, &cam, &vol, &ShadingOptions::default()).unwrap();
        assert!(r.ldr.pixels.pixels().iter().all(|p| *p == Rgb::zeros()));
        assert!(r.shading.pixels.pixels().iter().all(|p| p.x > 0.0));
    }

    #[test]
    fn resolution_mismatch_is_an_error() {
        let vol = VsgVolume::empty([2, 2, 2], Aabb::centered(Vec3::zeros(), 4.0)).unwrap();
        let cam = Camera::with_fov(4, 3, 1.0, Pose::identity());
        let surf = SurfaceBuffers::uniform(5, 3, Rgb::zeros(), -Vec3::z(), 1.0);
        assert!(shade_lambertian(&surf, &cam, &vol, &ShadingOptions::default()).is_err());
    }

    #[test]
    fn single_direction_jacobian() {
        let cam = Camera::with_fov(1, 1, 1.0, Pose::identity());
        let surf = SurfaceBuffers::uniform(1, 1, Rgb::repeat(0.5), -Vec3::z(), 1.0);
        let vol = VsgVolume::empty([2, 2, 2], Aabb::centered(Vec3::zeros(), 4.0)).unwrap();
        let opts = ShadingOptions { k: 10, ..Default::default() };
        let setup = ShadingSetup::new(&surf, &cam, &vol, &opts).unwrap();
        let mut rad = vec![vec![Rgb::zeros(); 10]];
        let r0 = Rgb::new(1.5, 0.25, 3.0);
        rad[0][3] = r0;
        let l0 = setup.quadrature.cells[0].directions[3];
        let res = shade_with_setup(&setup, surf.albedo.pixels(), surf.normal.pixels(), &rad, 0.9);
        let dw = 2.0 * PI / 10.0;
        assert_eq!(res.jacobian[0], r0 * l0.transpose() * dw);
    }
}

//! Analytic test scenes and brute-force reference renderers.
//!
//! Scenes are sets of axis-aligned boxes and spheres that either emit (a
//! spherical Gaussian or isotropic radiance) or reflect diffusely. Diffuse
//! surfaces are lit by one bounce of direct emission: irradiance is summed
//! over a grid of points on each emitter with analytic occlusion tests.

use std::f64::consts::PI;

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Pose};
use crate::composite::MarchConfig;
use crate::error::{Error, Result};
use crate::image::{NormalImage, RgbImage, ScalarImage};
use crate::math::{Rgb, Vec3};
use crate::loss::MaskImage;
use crate::objective::{LossWeights, Objective, ObjectiveOptions, Observation};
use crate::quadrature::GOLDEN_ANGLE;
use crate::shading::{
    panorama_rays, render_panorama, render_perspective_from_volume, shade_lambertian, soft_clip_rgb, ShadingOptions,
    DEFAULT_TAU,
};
use crate::surface::SurfaceBuffers;
use crate::volume::{sample_grid, Aabb, Interp, Ray, SphericalGaussian, VsgVolume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Box { min: Vec3, max: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case", deny_unknown_fields)]
pub enum Role {
    /// Emits `radiance`, shaped by a lobe `(axis, σ)` when given.
    Emitter { radiance: Rgb, lobe: Option<(Vec3, f64)> },
    Diffuse { albedo: Rgb },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub role: Role,
}

impl Primitive {
    pub fn emitter_box(min: Vec3, max: Vec3, radiance: Rgb) -> Self {
        Self {
            shape: Shape::Box { min, max },
            role: Role::Emitter { radiance, lobe: None },
        }
    }

    pub fn diffuse_box(min: Vec3, max: Vec3, albedo: Rgb) -> Self {
        Self {
            shape: Shape::Box { min, max },
            role: Role::Diffuse { albedo },
        }
    }

    pub fn emission(&self) -> Option<SphericalGaussian> {
        match self.role {
            Role::Emitter { radiance, lobe: None } => Some(SphericalGaussian::isotropic(radiance)),
            Role::Emitter {
                radiance,
                lobe: Some((axis, sigma)),
            } => Some(SphericalGaussian::new(radiance, axis, sigma)),
            Role::Diffuse { .. } => None,
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        match self.shape {
            Shape::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
            Shape::Sphere { center, radius } => (p - center).norm_squared() <= radius * radius,
        }
    }

    /// Nearest hit with `t > t_min`, as `(t, outward normal)`.
    pub fn intersect(&self, ray: &Ray, t_min: f64) -> Option<(f64, Vec3)> {
        match self.shape {
            Shape::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                let mut n0 = Vec3::zeros();
                let mut n1 = Vec3::zeros();
                for a in 0..3 {
                    let o = ray.origin[a];
                    let d = ray.direction[a];
                    if d == 0.0 {
                        if o < min[a] || o > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((min[a] - o) / d, (max[a] - o) / d);
                    let mut na = Vec3::zeros();
                    na[a] = -1.0;
                    let mut nb = -na;
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                        std::mem::swap(&mut na, &mut nb);
                    }
                    if ta > t0 {
                        t0 = ta;
                        n0 = na;
                    }
                    if tb < t1 {
                        t1 = tb;
                        n1 = nb;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > t_min {
                    Some((t0, n0))
                } else if t1 > t_min {
                    Some((t1, n1))
                } else {
                    None
                }
            }
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - center;
                let b = oc.dot(&ray.direction);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = if -b - sq > t_min { -b - sq } else { -b + sq };
                (t > t_min).then(|| (t, (ray.at(t) - center) / radius))
            }
        }
    }

    /// Closest point on the surface to `p` and the outward normal there.
    pub fn nearest_surface(&self, p: &Vec3) -> (Vec3, Vec3) {
        match self.shape {
            Shape::Box { min, max } => {
                let mut best = (f64::INFINITY, 0usize, 0.0);
                for a in 0..3 {
                    let dl = (p[a] - min[a]).abs();
                    let dh = (max[a] - p[a]).abs();
                    if dl < best.0 {
                        best = (dl, a, -1.0);
                    }
                    if dh < best.0 {
                        best = (dh, a, 1.0);
                    }
                }
                let (_, a, s) = best;
                let mut q = *p;
                q[a] = if s < 0.0 { min[a] } else { max[a] };
                let mut n = Vec3::zeros();
                n[a] = s;
                (q, n)
            }
            Shape::Sphere { center, radius } => {
                let d = p - center;
                let n = if d.norm() > 0.0 { d.normalize() } else { Vec3::y() };
                (center + n * radius, n)
            }
        }
    }

    /// Sample points on the surface with their outward normals and areas.
    fn surface_samples(&self, per_face: usize) -> Vec<(Vec3, Vec3, f64)> {
        let m = per_face.max(1);
        match self.shape {
            Shape::Box { min, max } => {
                let ext = max - min;
                let mut out = Vec::with_capacity(6 * m * m);
                for a in 0..3 {
                    let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                    let da = ext[b] * ext[c] / (m * m) as f64;
                    for side in [-1.0, 1.0] {
                        let mut n = Vec3::zeros();
                        n[a] = side;
                        for i in 0..m {
                            for j in 0..m {
                                let mut q = Vec3::zeros();
                                q[a] = if side < 0.0 { min[a] } else { max[a] };
                                q[b] = min[b] + (i as f64 + 0.5) / m as f64 * ext[b];
                                q[c] = min[c] + (j as f64 + 0.5) / m as f64 * ext[c];
                                out.push((q, n, da));
                            }
                        }
                    }
                }
                out
            }
            Shape::Sphere { center, radius } => {
                let n = 6 * m * m;
                let da = 4.0 * PI * radius * radius / n as f64;
                (0..n)
                    .map(|i| {
                        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                        let r = (1.0 - z * z).sqrt();
                        let phi = i as f64 * GOLDEN_ANGLE;
                        let d = Vec3::new(r * phi.cos(), r * phi.sin(), z);
                        (center + d * radius, d, da)
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub primitive: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub camera: Camera,
    pub bounds: Aabb,
    /// Emitter surface samples per face edge when computing irradiance.
    #[serde(default = "default_emitter_samples")]
    pub emitter_samples: usize,
}

fn default_emitter_samples() -> usize {
    16
}

const SHADOW_EPS: f64 = 1e-7;

impl AnalyticScene {
    pub fn new(primitives: Vec<Primitive>, camera: Camera, bounds: Aabb) -> Result<Self> {
        let s = Self {
            primitives,
            camera,
            bounds,
            emitter_samples: default_emitter_samples(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let lo = self.bounds.min;
        let hi = self.bounds.max();
        let inside = |p: &Vec3| (0..3).all(|a| p[a] >= lo[a] - 1e-9 && p[a] <= hi[a] + 1e-9);
        for (i, p) in self.primitives.iter().enumerate() {
            let ok = match p.shape {
                Shape::Box { min, max } => inside(&min) && inside(&max) && (0..3).all(|a| min[a] <= max[a]),
                Shape::Sphere { center, radius } => {
                    radius >= 0.0 && inside(&(center - Vec3::repeat(radius))) && inside(&(center + Vec3::repeat(radius)))
                }
            };
            if !ok {
                return Err(Error::Invalid(format!("primitive {i} does not lie inside the scene bounds")));
            }
            if let Role::Emitter { radiance, .. } = p.role {
                if radiance.iter().any(|&c| !(c >= 0.0)) {
                    return Err(Error::Invalid(format!("emitter {i} has negative radiance")));
                }
            }
        }
        Ok(())
    }

    /// First primitive hit along the ray.
    pub fn trace(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, n)) = p.intersect(ray, 0.0) {
                if best.as_ref().map_or(true, |b| t < b.t) {
                    best = Some(Hit {
                        t,
                        point: ray.at(t),
                        normal: n,
                        primitive: i,
                    });
                }
            }
        }
        best
    }

    fn occluded(&self, from: &Vec3, to: &Vec3, skip: usize) -> bool {
        let d = to - from;
        let dist = d.norm();
        let ray = Ray::new(*from, d);
        self.primitives
            .iter()
            .enumerate()
            .any(|(i, p)| i != skip && p.intersect(&ray, SHADOW_EPS).is_some_and(|(t, _)| t < dist - SHADOW_EPS))
    }

    /// Direct irradiance at a surface point with normal `n`, per channel.
    pub fn irradiance(&self, x: &Vec3, n: &Vec3) -> Rgb {
        let x = x + n * 1e-6;
        let mut e = Rgb::zeros();
        for (k, p) in self.primitives.iter().enumerate() {
            let Some(sg) = p.emission() else { continue };
            if p.contains(&x) {
                continue;
            }
            for (y, ny, da) in p.surface_samples(self.emitter_samples) {
                let d = y - x;
                let r2 = d.norm_squared();
                let l = d / r2.sqrt();
                let cos_x = l.dot(n);
                let cos_y = -l.dot(&ny);
                if cos_x <= 0.0 || cos_y <= 0.0 {
                    continue;
                }
                if self.occluded(&x, &y, k) {
                    continue;
                }
                e += sg.eval(&-l) * (cos_x * cos_y * da / r2);
            }
        }
        e
    }

    /// Exitant radiance at a hit toward direction `v` (pointing away from the surface).
    pub fn exitant(&self, hit: &Hit, v: &Vec3) -> Rgb {
        let p = &self.primitives[hit.primitive];
        match p.role {
            Role::Emitter { .. } => p.emission().expect("emitter").eval(v),
            Role::Diffuse { albedo } => albedo.component_mul(&self.irradiance(&hit.point, &hit.normal)) / PI,
        }
    }

    pub fn albedo_of(&self, i: usize) -> Rgb {
        match self.primitives[i].role {
            Role::Diffuse { albedo } => albedo,
            Role::Emitter { .. } => Rgb::zeros(),
        }
    }
}

/// Exact first-hit radiance for an analytic scene.
pub fn reference_radiance_scene(scene: &AnalyticScene, ray: &Ray) -> Rgb {
    match scene.trace(ray) {
        Some(hit) => scene.exitant(&hit, &-ray.direction),
        None => Rgb::zeros(),
    }
}

/// Sample distances at the midpoints of every voxel traversed by the ray,
/// from the sorted list of grid-plane crossings.
pub fn voxel_walk(ray: &Ray, volume: &VsgVolume) -> Vec<f64> {
    let Some((t0, t1)) = volume.bounds().intersect(ray) else {
        return Vec::new();
    };
    let dims = volume.dims();
    let vs = volume.voxel_size();
    let min = volume.bounds().min;
    let mut ts = vec![t0, t1];
    for a in 0..3 {
        let d = ray.direction[a];
        if d == 0.0 {
            continue;
        }
        for i in 0..=dims[a] {
            let t = (min[a] + i as f64 * vs[a] - ray.origin[a]) / d;
            if t > t0 && t < t1 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.windows(2)
        .filter(|w| w[1] - w[0] > 1e-12)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect()
}

/// Voxel-walk compositing oracle: one nearest-voxel sample per traversed voxel.
pub fn reference_radiance_volume(volume: &VsgVolume, ray: &Ray) -> Rgb {
    let v = -ray.direction;
    let mut acc = Rgb::zeros();
    let mut trans = 1.0;
    for t in voxel_walk(ray, volume) {
        let Some(i) = volume.voxel_at(&ray.at(t)) else { continue };
        let a = volume.alpha(i);
        acc += volume.sg(i).eval(&v) * (trans * a);
        trans *= 1.0 - a;
    }
    acc
}

/// Color-and-opacity compositor that ignores lobe shape (every sample emits
/// its `c`), with the same sample placement as `composite_radiance`.
pub fn composite_rgba(ray: &Ray, volume: &VsgVolume, cfg: &MarchConfig) -> Rgb {
    let mut acc = Rgb::zeros();
    let mut trans = 1.0;
    crate::composite::march(ray, volume, cfg.sampling, |t| {
        let (a, sg) = sample_grid(&ray.at(t), volume, cfg.interp);
        acc += sg.color * (trans * a);
        trans *= 1.0 - a;
        true
    });
    acc
}

/// Voxel grid of the scene: cells whose centers lie inside a primitive are
/// opaque and carry its lobe. Emitters keep their own lobe; diffuse cells get
/// an isotropic lobe with the single-bounce radiance at the nearest surface
/// point. Empty cells next to occupied ones copy the nearest occupied lobe at
/// α = 0 so that interpolation at object borders keeps the lobe intact.
pub fn voxelize(scene: &AnalyticScene, dims: [usize; 3]) -> Result<VsgVolume> {
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::Invalid("voxelize needs at least 2 cells per axis".into()));
    }
    let mut vol = VsgVolume::empty(dims, scene.bounds)?;
    let n = vol.len();
    let cells: Vec<Option<SphericalGaussian>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let c = vol.voxel_center(i);
            let k = scene.primitives.iter().position(|p| p.contains(&c))?;
            let p = &scene.primitives[k];
            Some(match p.emission() {
                Some(sg) => sg,
                None => {
                    let (q, nrm) = p.nearest_surface(&c);
                    let albedo = scene.albedo_of(k);
                    SphericalGaussian::isotropic(albedo.component_mul(&scene.irradiance(&q, &nrm)) / PI)
                }
            })
        })
        .collect();
    for (i, c) in cells.iter().enumerate() {
        if let Some(sg) = c {
            vol.set(i, 1.0, sg);
        }
    }
    let vs = vol.voxel_size();
    for i in 0..n {
        if cells[i].is_some() {
            continue;
        }
        let [x, y, z] = vol.coords(i);
        let mut best: Option<(f64, usize)> = None;
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if nx < 0 || ny < 0 || nz < 0 || nx >= dims[0] as i64 || ny >= dims[1] as i64 || nz >= dims[2] as i64
                    {
                        continue;
                    }
                    let j = vol.index(nx as usize, ny as usize, nz as usize);
                    if cells[j].is_some() {
                        let d2 = (dx as f64 * vs.x).powi(2) + (dy as f64 * vs.y).powi(2) + (dz as f64 * vs.z).powi(2);
                        if best.map_or(true, |(b, _)| d2 < b) {
                            best = Some((d2, j));
                        }
                    }
                }
            }
        }
        if let Some((_, j)) = best {
            vol.set(i, 0.0, cells[j].as_ref().expect("occupied"));
        }
    }
    Ok(vol)
}

/// Ground truth for the scene camera.
#[derive(Clone, Debug)]
pub struct PerspectiveTruth {
    pub image: RgbImage,
    pub surface: SurfaceBuffers,
    /// Whether each pixel sees a diffuse surface.
    pub diffuse: Vec<bool>,
}

/// Renders the scene camera: radiance, albedo, normal and camera z-depth.
/// Pixels that see nothing get depth at the bounds exit and zero albedo.
pub fn render_scene_perspective(scene: &AnalyticScene, clip: bool) -> PerspectiveTruth {
    let cam = &scene.camera;
    let (w, h) = (cam.width, cam.height);
    let px: Vec<(Rgb, Rgb, Vec3, f64, bool)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            let ray = cam.pixel_to_ray(u, v);
            let k = cam.z_per_distance(u, v);
            match scene.trace(&ray) {
                Some(hit) => {
                    let l = scene.exitant(&hit, &-ray.direction);
                    let l = if clip { soft_clip_rgb(&l, DEFAULT_TAU) } else { l };
                    let diffuse = matches!(scene.primitives[hit.primitive].role, Role::Diffuse { .. });
                    (l, scene.albedo_of(hit.primitive), hit.normal, hit.t * k, diffuse)
                }
                None => {
                    let t = scene.bounds.intersect(&ray).map_or(1.0, |(_, t1)| t1.max(1e-3));
                    (Rgb::zeros(), Rgb::zeros(), -ray.direction, t * k, false)
                }
            }
        })
        .collect();
    PerspectiveTruth {
        image: RgbImage::from_fn(w, h, |x, y| px[y * w + x].0),
        surface: SurfaceBuffers {
            albedo: RgbImage::from_fn(w, h, |x, y| px[y * w + x].1),
            normal: NormalImage::from_fn(w, h, |x, y| px[y * w + x].2),
            depth: ScalarImage::from_fn(w, h, |x, y| px[y * w + x].3),
        },
        diffuse: px.iter().map(|p| p.4).collect(),
    }
}

/// Panorama of the analytic scene at `center` (identity orientation).
pub fn render_scene_panorama(scene: &AnalyticScene, center: &Vec3, resolution: (usize, usize), clip: bool) -> RgbImage {
    let (w, h) = resolution;
    let rays = panorama_rays(center, &Rotation3::identity(), w, h);
    let px: Vec<Rgb> = rays
        .par_iter()
        .map(|r| {
            let l = reference_radiance_scene(scene, r);
            if clip {
                soft_clip_rgb(&l, DEFAULT_TAU)
            } else {
                l
            }
        })
        .collect();
    RgbImage::from_vec(w, h, px).expect("panorama size")
}

/// Panoramas at `poses` plus the scene camera's image, depth and surface
/// ground truth.
pub fn generate_observations(
    scene: &AnalyticScene,
    poses: &[Vec3],
    resolution: (usize, usize),
    clip: bool,
) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    for p in poses {
        if !scene.bounds.contains(p) {
            return Err(Error::Invalid(format!("panorama pose {p:?} lies outside the scene bounds")));
        }
        out.push(Observation::Panorama {
            center: *p,
            orientation: Rotation3::identity(),
            image: render_scene_panorama(scene, p, resolution, clip),
        });
    }
    let truth = render_scene_perspective(scene, clip);
    out.push(Observation::Perspective {
        camera: scene.camera,
        image: truth.image,
        depth: Some(truth.surface.depth.clone()),
    });
    out.push(Observation::AlbedoGt {
        image: truth.surface.albedo,
        mask: None,
    });
    out.push(Observation::NormalGt {
        image: truth.surface.normal,
    });
    out.push(Observation::DepthGt {
        image: truth.surface.depth,
    });
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    BoxLamp,
    TwoEmitters,
    Slab,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box-lamp" => Ok(Preset::BoxLamp),
            "two-emitters" => Ok(Preset::TwoEmitters),
            "slab" => Ok(Preset::Slab),
            _ => Err(Error::Invalid(format!(
                "unknown preset `{s}` (expected box-lamp, two-emitters or slab)"
            ))),
        }
    }
}

/// A shipped scene with its panorama poses.
#[derive(Clone, Debug)]
pub struct PresetScene {
    pub scene: AnalyticScene,
    pub poses: Vec<Vec3>,
}

pub fn preset(p: Preset) -> PresetScene {
    match p {
        Preset::BoxLamp => box_lamp(5.0),
        Preset::TwoEmitters => two_emitters(),
        Preset::Slab => slab(),
    }
}

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

/// Room corner in a 2 m cube (y down): a bright floor, dark back and left
/// walls, and a square ceiling lamp of the given radiance. Three panorama
/// poses sit just above the floor.
pub fn box_lamp(radiance: f64) -> PresetScene {
    let prims = vec![
        Primitive::emitter_box(v(-0.5, -1.0, -0.5), v(0.5, -0.75, 0.5), Rgb::repeat(radiance)),
        Primitive::diffuse_box(v(-1.0, 0.75, -1.0), v(1.0, 1.0, 1.0), Rgb::repeat(0.6)),
        Primitive::diffuse_box(v(-1.0, -0.75, 0.75), v(1.0, 0.75, 1.0), Rgb::repeat(0.05)),
        Primitive::diffuse_box(v(-1.0, -0.75, -1.0), v(-0.75, 0.75, 0.75), Rgb::repeat(0.05)),
    ];
    let pose = Pose::look_at(v(0.1, -0.1, -0.7), v(0.1, 0.75, -0.1), v(0.0, 1.0, 0.0));
    let camera = Camera::with_fov(12, 9, 0.9, pose);
    PresetScene {
        scene: AnalyticScene::new(prims, camera, Aabb::centered(Vec3::zeros(), 2.0)).expect("box-lamp preset"),
        poses: vec![
            v(-0.35, 0.0, -0.35),
            v(0.4, 0.0, -0.4),
            v(-0.35, 0.1, 0.4),
            v(0.45, 0.2, 0.45),
            v(0.0, -0.35, 0.0),
            v(0.0, 0.45, -0.1),
            v(0.1, 0.6, -0.1),
            v(-0.4, 0.6, -0.5),
            v(0.5, 0.6, 0.2),
        ],
    }
}

/// Two opposite wall lamps whose lobes point at each other.
pub fn two_emitters() -> PresetScene {
    let lobe_a = Some((v(1.0, 0.0, 0.0), 0.5));
    let lobe_b = Some((v(-1.0, 0.0, 0.0), 0.5));
    let prims = vec![
        Primitive {
            shape: Shape::Box {
                min: v(-1.0, -0.25, -0.25),
                max: v(-0.75, 0.25, 0.25),
            },
            role: Role::Emitter {
                radiance: Rgb::new(3.0, 2.5, 2.0),
                lobe: lobe_a,
            },
        },
        Primitive {
            shape: Shape::Box {
                min: v(0.75, -0.25, -0.25),
                max: v(1.0, 0.25, 0.25),
            },
            role: Role::Emitter {
                radiance: Rgb::new(1.0, 1.5, 3.0),
                lobe: lobe_b,
            },
        },
        Primitive::diffuse_box(v(-1.0, 0.75, -1.0), v(1.0, 1.0, 1.0), Rgb::repeat(0.5)),
    ];
    let pose = Pose::look_at(v(0.0, 0.0, -0.9), v(0.0, 0.0, 1.0), v(0.0, 1.0, 0.0));
    let camera = Camera::with_fov(16, 12, 1.6, pose);
    PresetScene {
        scene: AnalyticScene::new(prims, camera, Aabb::centered(Vec3::zeros(), 2.0)).expect("two-emitters preset"),
        poses: vec![v(0.0, 0.0, 0.0), v(0.0, 0.0, 0.6)],
    }
}

/// A wall filling the camera's view, for depth checks.
pub fn slab() -> PresetScene {
    let prims = vec![
        Primitive::diffuse_box(v(-1.0, -1.0, 0.5), v(1.0, 1.0, 0.8), Rgb::new(0.7, 0.6, 0.5)),
        Primitive::emitter_box(v(-0.5, -0.5, -1.0), v(0.5, 0.5, -0.9), Rgb::repeat(2.0)),
    ];
    let pose = Pose::look_at(Vec3::zeros(), v(0.3, 0.2, 1.0), v(0.0, 1.0, 0.0));
    let camera = Camera::with_fov(32, 24, 1.0, pose);
    PresetScene {
        scene: AnalyticScene::new(prims, camera, Aabb::centered(Vec3::zeros(), 2.0)).expect("slab preset"),
        poses: vec![Vec3::zeros()],
    }
}

/// Gradient-check problem built from a preset: a random "truth" volume
/// renders the photometric targets, the preset camera supplies the surface
/// truth, and the objective starts from a perturbed copy of both with the
/// surface fitted. Residuals stay small, which keeps finite differences
/// accurate. The camera is downscaled to at most 12 pixels wide.
pub fn grad_check_objective(p: Preset, dims: [usize; 3], seed: u64) -> Result<Objective> {
    let ps = preset(p);
    let mut scene = ps.scene;
    let cam = scene.camera;
    if cam.width > 12 {
        let w = 12;
        let h = (cam.height * w).div_ceil(cam.width).max(1);
        let hfov = 2.0 * (0.5 * cam.width as f64 / cam.intrinsics.fx).atan();
        scene.camera = Camera::with_fov(w, h, hfov, cam.pose);
    }
    let camera = scene.camera;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut truth = VsgVolume::empty(dims, scene.bounds)?;
    for i in 0..truth.len() {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let axis = if axis.norm() < 0.1 { Vec3::y() } else { axis.normalize() };
        let color = Rgb::new(rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0));
        let sg = SphericalGaussian::new(color, axis, rng.gen_range(0.5..2.0));
        truth.set(i, rng.gen_range(0.05..0.6), &sg);
    }

    let shading = ShadingOptions {
        march: MarchConfig::uniform(32, Interp::Trilinear),
        ..ShadingOptions::default()
    };
    let march = shading.march;
    let gt_surface = render_scene_perspective(&scene, true).surface;
    let (view, view_depth) = render_perspective_from_volume(&camera, &truth, &march);
    let target = shade_lambertian(&gt_surface, &camera, &truth, &shading)?;
    let (w, h) = (camera.width, camera.height);
    let mut observations: Vec<Observation> = ps
        .poses
        .iter()
        .take(2)
        .map(|c| Observation::Panorama {
            center: *c,
            orientation: Rotation3::identity(),
            image: render_panorama(c, &Rotation3::identity(), &truth, (16, 8), true, &march).pixels,
        })
        .collect();
    observations.push(Observation::Perspective {
        camera,
        image: view.pixels,
        depth: Some(view_depth),
    });
    observations.push(Observation::AlbedoGt {
        image: gt_surface.albedo.clone(),
        mask: Some(MaskImage::from_fn(w, h, |x, y| (x / 2 + y / 2) % 2 == 0)),
    });
    observations.push(Observation::NormalGt {
        image: gt_surface.normal.clone(),
    });
    observations.push(Observation::DepthGt {
        image: gt_surface.depth.clone(),
    });

    let mut start = truth.clone();
    for r in start.records_mut() {
        for v in r.iter_mut().skip(1) {
            *v += rng.gen_range(-0.05..0.05);
        }
        r[0] = (r[0] + rng.gen_range(-0.03..0.03)).clamp(0.02, 0.7);
    }
    let mut surface = gt_surface;
    for a in surface.albedo.pixels_mut() {
        *a = a.map(|v| (v + rng.gen_range(-0.05..0.05)).clamp(0.05, 0.95));
    }
    for n in surface.normal.pixels_mut() {
        let d = Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        *n = (*n + d).normalize();
    }
    for d in surface.depth.pixels_mut() {
        *d *= rng.gen_range(0.95..1.05);
    }
    // the rerender target must match the camera of the first perspective view
    observations.insert(
        0,
        Observation::Perspective {
            camera,
            image: target.ldr.pixels,
            depth: None,
        },
    );
    let opts = ObjectiveOptions {
        shading,
        march,
        pixel_budget: usize::MAX,
        fit_surface: true,
    };
    Objective::new(start, Some(surface), observations, LossWeights::default(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_hit_and_normal() {
        let p = Primitive::diffuse_box(v(-1.0, -1.0, 1.0), v(1.0, 1.0, 2.0), Rgb::repeat(0.5));
        let (t, n) = p.intersect(&Ray::new(Vec3::zeros(), Vec3::z()), 0.0).unwrap();
        assert_eq!(t, 1.0);
        assert_eq!(n, -Vec3::z());
        assert!(p.intersect(&Ray::new(Vec3::zeros(), -Vec3::z()), 0.0).is_none());
    }

    #[test]
    fn empty_and_full_voxelization() {
        let cam = Camera::with_fov(2, 2, 1.0, Pose::identity());
        let b = Aabb::centered(Vec3::zeros(), 2.0);
        let empty = AnalyticScene::new(vec![], cam, b).unwrap();
        assert!(voxelize(&empty, [4, 4, 4]).unwrap().records().iter().all(|r| r[0] == 0.0));
        let full = AnalyticScene::new(vec![Primitive::diffuse_box(b.min, b.max(), Rgb::repeat(0.5))], cam, b).unwrap();
        assert!(voxelize(&full, [4, 4, 4]).unwrap().records().iter().all(|r| r[0] == 1.0));
    }

    #[test]
    fn voxel_walk_covers_the_span() {
        let vol = VsgVolume::empty([5, 3, 4], Aabb::new(Vec3::zeros(), v(1.0, 0.6, 0.8))).unwrap();
        let ray = Ray::new(v(-0.3, 0.1, 0.05), v(1.0, 0.2, 0.5));
        let ts = voxel_walk(&ray, &vol);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        let cells: Vec<usize> = ts.iter().map(|t| vol.voxel_at(&ray.at(*t)).unwrap()).collect();
        let mut d = cells.clone();
        d.dedup();
        assert_eq!(d.len(), cells.len());
    }

    #[test]
    fn preset_names_parse() {
        assert_eq!("slab".parse::<Preset>().unwrap(), Preset::Slab);
        assert!("nope".parse::<Preset>().is_err());
    }
}

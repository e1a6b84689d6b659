//! The weighted multi-task objective over a VSG volume and, optionally, the
//! surface buffers, with its reverse pass.

use nalgebra::Rotation3;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::composite::{
    depth_batch, depth_batch_backward, radiance_batch, radiance_batch_backward,
    MarchConfig,
};
use crate::error::{Error, Result};
use crate::grad::{Differentiable, GradientTape};
use crate::image::{Image, NormalImage, RgbImage, ScalarImage};
use crate::loss::{
    loss_albedo_grad, loss_depth_grad, loss_normal_grad, loss_reg_alpha_grad, mse_rgb_grad, mse_scalar_grad,
    MaskImage,
};
use crate::math::{logistic, logit, Rgb, Vec3};
use crate::shading::{
    camera_rays, panorama_rays, shade_backward, soft_clip, shade_with_setup, soft_clip_grad, soft_clip_rgb, ShadingOptions,
    ShadingSetup, DEFAULT_TAU,
};
use crate::surface::SurfaceBuffers;
use crate::volume::{Ray, VsgVolume, CHANNELS, CH_ALPHA, CH_COLOR};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_a: f64,
    pub lambda_n: f64,
    pub lambda_d: f64,
    pub lambda_l: f64,
    pub lambda_visible: f64,
    pub lambda_reg: f64,
    pub lambda_rerender: f64,
    pub lambda_local: f64,
    pub lambda_si: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_a: 1.0,
            lambda_n: 1.0,
            lambda_d: 1.0,
            lambda_l: 1.0,
            lambda_visible: 1.0,
            lambda_reg: 0.01,
            lambda_rerender: 1.0,
            lambda_local: 0.5,
            lambda_si: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_a,
            self.lambda_n,
            self.lambda_d,
            self.lambda_l,
            self.lambda_visible,
            self.lambda_reg,
            self.lambda_rerender,
            self.lambda_local,
            self.lambda_si,
        ];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Invalid("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// One piece of supervision.
#[derive(Clone, Debug)]
pub enum Observation {
    /// LDR equirectangular panorama seen from `center`.
    Panorama {
        center: Vec3,
        orientation: Rotation3<f64>,
        image: RgbImage,
    },
    /// LDR perspective image, optionally with its camera z-depth.
    Perspective {
        camera: Camera,
        image: RgbImage,
        depth: Option<ScalarImage>,
    },
    AlbedoGt {
        image: RgbImage,
        mask: Option<MaskImage>,
    },
    NormalGt {
        image: NormalImage,
    },
    DepthGt {
        image: ScalarImage,
    },
}

/// Unweighted values of every term plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub albedo: f64,
    pub normal: f64,
    pub depth: f64,
    pub light: f64,
    pub visible: f64,
    pub reg: f64,
    pub rerender: f64,
    pub total: f64,
}

impl LossTerms {
    pub const NAMES: [&'static str; 8] = ["albedo", "normal", "depth", "light", "visible", "reg", "rerender", "total"];

    pub fn values(&self) -> [f64; 8] {
        [
            self.albedo,
            self.normal,
            self.depth,
            self.light,
            self.visible,
            self.reg,
            self.rerender,
            self.total,
        ]
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::NAMES
            .iter()
            .zip(self.values())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
    }

    fn weighted(mut self, w: &LossWeights) -> Self {
        self.total = w.lambda_a * self.albedo
            + w.lambda_n * self.normal
            + w.lambda_d * self.depth
            + w.lambda_l * self.light
            + w.lambda_visible * self.visible
            + w.lambda_reg * self.reg
            + w.lambda_rerender * self.rerender;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveOptions {
    pub shading: ShadingOptions,
    /// Sampling for panorama and perspective queries.
    pub march: MarchConfig,
    /// Pixels drawn per photometric observation in a sampled evaluation.
    pub pixel_budget: usize,
    /// Optimize the surface buffers along with the volume.
    pub fit_surface: bool,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        Self {
            shading: ShadingOptions::default(),
            march: MarchConfig::default(),
            pixel_budget: 4096,
            fit_surface: false,
        }
    }
}

struct Rerender {
    image: RgbImage,
    setup: ShadingSetup,
}

struct Record {
    version: u64,
    /// Pixel subset per observation; `None` means every pixel.
    subsets: Vec<Option<Vec<usize>>>,
    radiance: Vec<Vec<Rgb>>,
    shading: Vec<Rgb>,
}

/// Loss state over a working volume and optional surface buffers.
///
/// As a [`Differentiable`] the parameters are, per voxel, `(α logit, c, μ_raw,
/// σ_raw)`, followed by albedo, normal and depth per pixel when the surface
/// is fitted. Values and gradients from that interface use every pixel.
pub struct Objective {
    volume: VsgVolume,
    logits: Vec<f64>,
    surface: Option<SurfaceBuffers>,
    rerender: Option<Rerender>,
    observations: Vec<Observation>,
    weights: LossWeights,
    opts: ObjectiveOptions,
    version: u64,
    record: Option<Record>,
}

/// α is kept strictly inside (0, 1) so that its logit stays finite.
const ALPHA_EPS: f64 = 1e-6;

impl Objective {
    /// `surface` is the surface seen by the first perspective observation;
    /// shading query points and directions are fixed from it here.
    pub fn new(
        mut volume: VsgVolume,
        surface: Option<SurfaceBuffers>,
        observations: Vec<Observation>,
        weights: LossWeights,
        opts: ObjectiveOptions,
    ) -> Result<Self> {
        weights.validate()?;
        volume.validate()?;
        if observations.is_empty() {
            return Err(Error::Invalid("fitting needs at least one observation".into()));
        }
        let logits = volume
            .records_mut()
            .iter_mut()
            .map(|r| {
                r[CH_ALPHA] = r[CH_ALPHA].clamp(ALPHA_EPS, 1.0 - ALPHA_EPS);
                logit(r[CH_ALPHA])
            })
            .collect();
        let rerender = observations.iter().find_map(|o| match o {
            Observation::Perspective { camera, image, .. } => Some((camera, image)),
            _ => None,
        });
        let rerender = match (rerender, &surface) {
            (Some((camera, image)), Some(surf)) => {
                if !image.same_dims(&surf.albedo) {
                    return Err(Error::Shape("perspective image and surface buffers differ in size".into()));
                }
                Some(Rerender {
                    image: image.clone(),
                    setup: ShadingSetup::new(surf, camera, &volume, &opts.shading)?,
                })
            }
            _ => None,
        };
        for o in &observations {
            check_observation(o, surface.as_ref())?;
        }
        Ok(Self {
            volume,
            logits,
            surface,
            rerender,
            observations,
            weights,
            opts,
            version: 0,
            record: None,
        })
    }

    pub fn volume(&self) -> &VsgVolume {
        &self.volume
    }

    pub fn surface(&self) -> Option<&SurfaceBuffers> {
        self.surface.as_ref()
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    fn surface_params(&self) -> usize {
        match (&self.surface, self.opts.fit_surface) {
            (Some(s), true) => 7 * s.len(),
            _ => 0,
        }
    }

    fn touch(&mut self) {
        self.version += 1;
        self.record = None;
    }

    /// Evaluates every term. With `rng` the photometric observations use a
    /// random pixel subset; without it every pixel. The evaluation is
    /// recorded for [`Objective::backward`].
    pub fn forward(&mut self, rng: Option<&mut ChaCha8Rng>) -> Result<LossTerms> {
        let subsets = self.draw_subsets(rng);
        let mut t = LossTerms::default();
        let march = self.opts.march;

        let mut n_pano = 0;
        let mut n_vis = 0;
        for (o, sub) in self.observations.iter().zip(&subsets) {
            match o {
                Observation::Panorama {
                    center,
                    orientation,
                    image,
                } => {
                    let (rays, gt) = select(panorama_rays(center, orientation, image.width(), image.height()), image, sub);
                    let pred: Vec<Rgb> = radiance_batch(&rays, &self.volume, &march)
                        .iter()
                        .map(|r| soft_clip_rgb(r, DEFAULT_TAU))
                        .collect();
                    t.light += mse_rgb_grad(&pred, &gt).0;
                    n_pano += 1;
                }
                Observation::Perspective {
                    camera,
                    image,
                    depth: Some(depth),
                } => {
                    let (rays, gt) = select(camera_rays(camera), image, sub);
                    let pred: Vec<Rgb> = radiance_batch(&rays, &self.volume, &march)
                        .iter()
                        .map(|r| soft_clip_rgb(r, DEFAULT_TAU))
                        .collect();
                    let (dz, gt_d) = depth_pairs(camera, depth, sub, &depth_batch(&rays, &self.volume, &march));
                    t.visible += mse_rgb_grad(&pred, &gt).0 + mse_scalar_grad(&dz, &gt_d).0;
                    n_vis += 1;
                }
                _ => {}
            }
        }
        if n_pano > 0 {
            t.light /= n_pano as f64;
        }
        if n_vis > 0 {
            t.visible /= n_vis as f64;
        }
        t.reg = loss_reg_alpha_grad(&self.volume).0;

        let mut radiance = Vec::new();
        let mut shading = Vec::new();
        if let Some(surf) = &self.surface {
            for o in &self.observations {
                match o {
                    Observation::AlbedoGt { image, mask } => {
                        t.albedo = loss_albedo_grad(&surf.albedo, image, mask.as_ref(), self.weights.lambda_local)?.0
                    }
                    Observation::NormalGt { image } => t.normal = loss_normal_grad(&surf.normal, image)?.0,
                    Observation::DepthGt { image } => {
                        t.depth = loss_depth_grad(&surf.depth, image, self.weights.lambda_si)?.0
                    }
                    _ => {}
                }
            }
            if let Some(rr) = &self.rerender {
                radiance = rr.setup.radiance(&self.volume, &self.opts.shading.march);
                let res = shade_with_setup(
                    &rr.setup,
                    surf.albedo.pixels(),
                    surf.normal.pixels(),
                    &radiance,
                    self.opts.shading.tau,
                );
                t.rerender = mse_rgb_grad(res.ldr.pixels.pixels(), rr.image.pixels()).0;
                shading = res.shading.pixels.into_pixels();
            }
        }
        let t = t.weighted(&self.weights);
        self.record = Some(Record {
            version: self.version,
            subsets,
            radiance,
            shading,
        });
        Ok(t)
    }

    fn draw_subsets(&self, rng: Option<&mut ChaCha8Rng>) -> Vec<Option<Vec<usize>>> {
        let Some(rng) = rng else {
            return vec![None; self.observations.len()];
        };
        self.observations
            .iter()
            .map(|o| {
                let n = match o {
                    Observation::Panorama { image, .. } => image.len(),
                    Observation::Perspective { image, depth: Some(_), .. } => image.len(),
                    _ => return None,
                };
                if n <= self.opts.pixel_budget {
                    return None;
                }
                let mut v = sample(rng, n, self.opts.pixel_budget).into_vec();
                v.sort_unstable();
                Some(v)
            })
            .collect()
    }

    /// Gradient of the recorded total with respect to the stored volume
    /// channels (α itself, σ_raw) and the surface buffers.
    pub fn backward(&self) -> Result<GradientTape> {
        let rec = match &self.record {
            Some(r) if r.version == self.version => r,
            _ => return Err(Error::NotRecorded),
        };
        let w = &self.weights;
        let march = self.opts.march;
        let pixels = self.surface.as_ref().map_or(0, |s| s.len());
        let mut tape = GradientTape::zeros(self.volume.len(), pixels);

        let n_pano = self.observations.iter().filter(|o| matches!(o, Observation::Panorama { .. })).count();
        let n_vis = self
            .observations
            .iter()
            .filter(|o| matches!(o, Observation::Perspective { depth: Some(_), .. }))
            .count();
        for (o, sub) in self.observations.iter().zip(&rec.subsets) {
            match o {
                Observation::Panorama {
                    center,
                    orientation,
                    image,
                } if w.lambda_l > 0.0 => {
                    let (rays, gt) = select(panorama_rays(center, orientation, image.width(), image.height()), image, sub);
                    let g = clipped_mse_grad(&rays, &gt, &self.volume, &march, w.lambda_l / n_pano as f64);
                    radiance_batch_backward(&rays, &g, &self.volume, &march, &mut tape.volume);
                }
                Observation::Perspective {
                    camera,
                    image,
                    depth: Some(depth),
                } if w.lambda_visible > 0.0 => {
                    let scale = w.lambda_visible / n_vis as f64;
                    let (rays, gt) = select(camera_rays(camera), image, sub);
                    let g = clipped_mse_grad(&rays, &gt, &self.volume, &march, scale);
                    radiance_batch_backward(&rays, &g, &self.volume, &march, &mut tape.volume);
                    let t = depth_batch(&rays, &self.volume, &march);
                    let (dz, gt_d) = depth_pairs(camera, depth, sub, &t);
                    let (_, gz) = mse_scalar_grad(&dz, &gt_d);
                    let zpd = z_factors(camera, sub);
                    let gt_: Vec<f64> = gz.iter().zip(&zpd).map(|(g, k)| scale * g * k).collect();
                    depth_batch_backward(&rays, &gt_, &self.volume, &march, &mut tape.volume);
                }
                _ => {}
            }
        }
        if w.lambda_reg > 0.0 {
            let (_, g) = loss_reg_alpha_grad(&self.volume);
            for (t, g) in tape.volume.iter_mut().zip(g) {
                t[CH_ALPHA] += w.lambda_reg * g;
            }
        }

        if let Some(surf) = &self.surface {
            for o in &self.observations {
                match o {
                    Observation::AlbedoGt { image, mask } => {
                        let (_, g) = loss_albedo_grad(&surf.albedo, image, mask.as_ref(), w.lambda_local)?;
                        for (t, g) in tape.albedo.iter_mut().zip(g) {
                            *t += g * w.lambda_a;
                        }
                    }
                    Observation::NormalGt { image } => {
                        let (_, g) = loss_normal_grad(&surf.normal, image)?;
                        for (t, g) in tape.normal.iter_mut().zip(g) {
                            *t += g * w.lambda_n;
                        }
                    }
                    Observation::DepthGt { image } => {
                        let (_, g) = loss_depth_grad(&surf.depth, image, w.lambda_si)?;
                        for (t, g) in tape.depth.iter_mut().zip(g) {
                            *t += g * w.lambda_d;
                        }
                    }
                    _ => {}
                }
            }
            if let (Some(rr), true) = (&self.rerender, w.lambda_rerender > 0.0) {
                let res = shade_with_setup(
                    &rr.setup,
                    surf.albedo.pixels(),
                    surf.normal.pixels(),
                    &rec.radiance,
                    self.opts.shading.tau,
                );
                let (_, mut g) = mse_rgb_grad(res.ldr.pixels.pixels(), rr.image.pixels());
                for v in g.iter_mut() {
                    *v *= w.lambda_rerender;
                }
                let sg = shade_backward(
                    &rr.setup,
                    surf.albedo.pixels(),
                    surf.normal.pixels(),
                    &rec.radiance,
                    &rec.shading,
                    &g,
                    &self.volume,
                    &self.opts.shading,
                );
                for (t, g) in tape.albedo.iter_mut().zip(sg.albedo) {
                    *t += g;
                }
                for (t, g) in tape.normal.iter_mut().zip(sg.normal) {
                    *t += g;
                }
                for (t, g) in tape.volume.iter_mut().zip(sg.volume) {
                    for c in 0..CHANNELS {
                        t[c] += g[c];
                    }
                }
            }
        }
        Ok(tape)
    }

    /// Flat gradient in parameter space (α logit) from a tape.
    pub fn flatten(&self, tape: &GradientTape) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for g in tape.logit_space(&self.volume) {
            out.extend_from_slice(&g);
        }
        if self.surface_params() > 0 {
            for a in &tape.albedo {
                out.extend(a.iter());
            }
            for n in &tape.normal {
                out.extend(n.iter());
            }
            out.extend(&tape.depth);
        }
        out
    }

    /// Keeps stored values inside their domains: c ≥ 0, albedo in [0,1],
    /// unit normals, positive depth.
    pub fn project(&mut self) {
        for r in self.volume.records_mut() {
            for c in 0..3 {
                r[CH_COLOR + c] = r[CH_COLOR + c].max(0.0);
            }
        }
        if self.opts.fit_surface {
            if let Some(s) = &mut self.surface {
                for a in s.albedo.pixels_mut() {
                    *a = a.map(|v| v.clamp(0.0, 1.0));
                }
                for n in s.normal.pixels_mut() {
                    if n.norm() > 0.0 {
                        *n = n.normalize();
                    }
                }
                for d in s.depth.pixels_mut() {
                    *d = d.max(1e-3);
                }
            }
        }
        self.touch();
    }

    pub fn params(&self) -> Vec<f64> {
        (0..self.num_params()).map(|i| self.param(i)).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        for (i, &v) in p.iter().enumerate() {
            self.set_param_quiet(i, v);
        }
        self.touch();
    }

    fn set_param_quiet(&mut self, i: usize, value: f64) {
        let nv = self.volume.len() * CHANNELS;
        if i < nv {
            let (v, c) = (i / CHANNELS, i % CHANNELS);
            if c == CH_ALPHA {
                self.logits[v] = value;
                self.volume.records_mut()[v][CH_ALPHA] = logistic(value);
            } else {
                self.volume.records_mut()[v][c] = value;
            }
            return;
        }
        let s = self.surface.as_mut().expect("surface parameter without surface");
        let p = s.len();
        let j = i - nv;
        if j < 3 * p {
            s.albedo.pixels_mut()[j / 3][j % 3] = value;
        } else if j < 6 * p {
            let j = j - 3 * p;
            s.normal.pixels_mut()[j / 3][j % 3] = value;
        } else {
            s.depth.pixels_mut()[j - 6 * p] = value;
        }
    }

    pub fn into_parts(self) -> (VsgVolume, Option<SurfaceBuffers>) {
        (self.volume, self.surface)
    }
}

impl Differentiable for Objective {
    fn num_params(&self) -> usize {
        self.volume.len() * CHANNELS + self.surface_params()
    }

    fn param(&self, i: usize) -> f64 {
        let nv = self.volume.len() * CHANNELS;
        if i < nv {
            let (v, c) = (i / CHANNELS, i % CHANNELS);
            return if c == CH_ALPHA {
                self.logits[v]
            } else {
                self.volume.records()[v][c]
            };
        }
        let s = self.surface.as_ref().expect("surface parameter without surface");
        let p = s.len();
        let j = i - nv;
        if j < 3 * p {
            s.albedo.pixels()[j / 3][j % 3]
        } else if j < 6 * p {
            let j = j - 3 * p;
            s.normal.pixels()[j / 3][j % 3]
        } else {
            s.depth.pixels()[j - 6 * p]
        }
    }

    fn set_param(&mut self, i: usize, value: f64) {
        self.set_param_quiet(i, value);
        self.touch();
    }

    fn value(&mut self) -> f64 {
        self.forward(None).map(|t| t.total).unwrap_or(f64::NAN)
    }

    fn gradient(&mut self) -> Vec<f64> {
        match self.forward(None).and_then(|_| self.backward()) {
            Ok(tape) => self.flatten(&tape),
            Err(_) => vec![f64::NAN; self.num_params()],
        }
    }

    fn param_name(&self, i: usize) -> String {
        const CH: [&str; CHANNELS] = ["alpha_logit", "c_r", "c_g", "c_b", "mu_x", "mu_y", "mu_z", "sigma_raw"];
        let nv = self.volume.len() * CHANNELS;
        if i < nv {
            let [x, y, z] = self.volume.coords(i / CHANNELS);
            return format!("voxel({x},{y},{z}).{}", CH[i % CHANNELS]);
        }
        let p = self.surface.as_ref().map_or(0, |s| s.len());
        let j = i - nv;
        if j < 3 * p {
            format!("albedo[{}].{}", j / 3, j % 3)
        } else if j < 6 * p {
            format!("normal[{}].{}", (j - 3 * p) / 3, (j - 3 * p) % 3)
        } else {
            format!("depth[{}]", j - 6 * p)
        }
    }
}

fn check_observation(o: &Observation, surface: Option<&SurfaceBuffers>) -> Result<()> {
    let ldr = |img: &RgbImage| -> Result<()> {
        if img.pixels().iter().any(|p| p.iter().any(|&c| !(0.0..=1.0).contains(&c))) {
            return Err(Error::Invalid("photometric observations must be LDR in [0,1]".into()));
        }
        Ok(())
    };
    match o {
        Observation::Panorama { image, .. } => ldr(image),
        Observation::Perspective { camera, image, depth } => {
            ldr(image)?;
            if image.dims() != (camera.width, camera.height) {
                return Err(Error::Shape("perspective image does not match its camera".into()));
            }
            if let Some(d) = depth {
                if !d.same_dims(image) {
                    return Err(Error::Shape("perspective depth does not match its image".into()));
                }
            }
            Ok(())
        }
        Observation::AlbedoGt { image, mask } => {
            same_as_surface(image, surface)?;
            if let Some(m) = mask {
                if !m.same_dims(image) {
                    return Err(Error::Shape("albedo mask does not match the albedo".into()));
                }
            }
            Ok(())
        }
        Observation::NormalGt { image } => same_as_surface(image, surface),
        Observation::DepthGt { image } => same_as_surface(image, surface),
    }
}

fn same_as_surface<T>(img: &Image<T>, surface: Option<&SurfaceBuffers>) -> Result<()> {
    match surface {
        Some(s) if !img.same_dims(&s.albedo) => Err(Error::Shape(format!(
            "ground-truth buffer is {:?} but the surface is {:?}",
            img.dims(),
            s.albedo.dims()
        ))),
        _ => Ok(()),
    }
}

fn select(rays: Vec<Ray>, image: &RgbImage, sub: &Option<Vec<usize>>) -> (Vec<Ray>, Vec<Rgb>) {
    match sub {
        None => (rays, image.pixels().to_vec()),
        Some(idx) => (idx.iter().map(|&i| rays[i]).collect(), idx.iter().map(|&i| image.pixels()[i]).collect()),
    }
}

fn z_factors(camera: &Camera, sub: &Option<Vec<usize>>) -> Vec<f64> {
    let w = camera.width;
    let f = |i: usize| camera.z_per_distance((i % w) as f64, (i / w) as f64);
    match sub {
        None => (0..w * camera.height).map(f).collect(),
        Some(idx) => idx.iter().map(|&i| f(i)).collect(),
    }
}

/// Rendered z-depth and target depth for the selected pixels.
fn depth_pairs(camera: &Camera, depth: &ScalarImage, sub: &Option<Vec<usize>>, t: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = z_factors(camera, sub);
    let z = t.iter().zip(&k).map(|(t, k)| t * k).collect();
    let gt = match sub {
        None => depth.pixels().to_vec(),
        Some(idx) => idx.iter().map(|&i| depth.pixels()[i]).collect(),
    };
    (z, gt)
}

/// Upstream radiance gradients of `scale · MSE(φ(R), gt)`.
fn clipped_mse_grad(rays: &[Ray], gt: &[Rgb], volume: &VsgVolume, march: &MarchConfig, scale: f64) -> Vec<Rgb> {
    let n = 3.0 * rays.len().max(1) as f64;
    radiance_batch(rays, volume, march)
        .iter()
        .zip(gt)
        .map(|(hdr, g)| {
            Rgb::from_fn(|c, _| {
                let x = hdr[c];
                scale * 2.0 * (soft_clip(x, DEFAULT_TAU) - g[c]) / n * soft_clip_grad(x, DEFAULT_TAU)
            })
        })
        .collect()
}

//! Front-to-back alpha compositing of radiance and depth along rays, with
//! the matching reverse-mode passes.
//!
//! A ray query picks sample points between the ray's entry and exit of the
//! volume bounds, reads `(α_k, lobe_k)` at each and accumulates
//! `Σ_k T_k α_k E_k` where `T_k = Π_{i<k} (1 - α_i)`. For radiance `E_k` is the
//! lobe evaluated toward the ray origin; for depth it is the sample distance,
//! and the residual transmittance is assigned to the exit distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grad::{GradBuffer, GradSink};
use crate::math::{logistic, Rgb, Vec3};
use crate::volume::{
    decode_sigma, Interp, Ray, Stencil, VoxelRecord, VsgVolume, AXIS_EPS, CHANNELS, CH_ALPHA, CH_AXIS, CH_COLOR,
    CH_SIGMA,
};

/// Where along a ray the grid is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `n` equi-spaced points at the segment midpoints of the entry-exit span.
    Uniform(usize),
    /// One point at the midpoint of every voxel the ray crosses.
    VoxelCrossings,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarchConfig {
    pub sampling: Sampling,
    pub interp: Interp,
}

impl Default for MarchConfig {
    fn default() -> Self {
        Self {
            sampling: Sampling::Uniform(128),
            interp: Interp::Trilinear,
        }
    }
}

impl MarchConfig {
    pub fn uniform(n: usize, interp: Interp) -> Self {
        Self {
            sampling: Sampling::Uniform(n.max(1)),
            interp,
        }
    }

    pub fn voxel_crossings() -> Self {
        Self {
            sampling: Sampling::VoxelCrossings,
            interp: Interp::Nearest,
        }
    }
}

const MIN_SEGMENT: f64 = 1e-12;

/// Calls `visit(t)` for every sample distance in order; stops early when the
/// visitor returns `false`. Returns the exit distance, or `None` on a miss.
pub fn march<F: FnMut(f64) -> bool>(ray: &Ray, volume: &VsgVolume, sampling: Sampling, mut visit: F) -> Option<f64> {
    let (t0, t1) = volume.bounds().intersect(ray)?;
    match sampling {
        Sampling::Uniform(n) => {
            let n = n.max(1);
            let dt = (t1 - t0) / n as f64;
            for k in 0..n {
                if !visit(t0 + (k as f64 + 0.5) * dt) {
                    break;
                }
            }
        }
        Sampling::VoxelCrossings => {
            let dims = volume.dims();
            let vs = volume.voxel_size();
            let min = volume.bounds().min;
            let p0 = ray.at(t0);
            let mut cell = [0isize; 3];
            let mut step = [0isize; 3];
            let mut t_max = [f64::INFINITY; 3];
            let mut t_delta = [f64::INFINITY; 3];
            for a in 0..3 {
                let g = ((p0[a] - min[a]) / vs[a]).floor() as isize;
                cell[a] = g.clamp(0, dims[a] as isize - 1);
                let d = ray.direction[a];
                if d > 0.0 {
                    step[a] = 1;
                    let plane = min[a] + (cell[a] + 1) as f64 * vs[a];
                    t_max[a] = (plane - ray.origin[a]) / d;
                    t_delta[a] = vs[a] / d;
                } else if d < 0.0 {
                    step[a] = -1;
                    let plane = min[a] + cell[a] as f64 * vs[a];
                    t_max[a] = (plane - ray.origin[a]) / d;
                    t_delta[a] = -vs[a] / d;
                }
            }
            let mut t = t0;
            loop {
                let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                    0
                } else if t_max[1] <= t_max[2] {
                    1
                } else {
                    2
                };
                let tn = t_max[axis].min(t1);
                if tn - t > MIN_SEGMENT {
                    if !visit(0.5 * (t + tn)) {
                        break;
                    }
                    t = tn;
                }
                if tn >= t1 {
                    break;
                }
                cell[axis] += step[axis];
                t_max[axis] += t_delta[axis];
                if cell[axis] < 0 || cell[axis] >= dims[axis] as isize {
                    break;
                }
            }
        }
    }
    Some(t1)
}

/// Lobe value toward `v` for a raw (possibly interpolated) record.
fn emission(r: &VoxelRecord, v: &Vec3) -> Rgb {
    let color = Rgb::new(r[CH_COLOR], r[CH_COLOR + 1], r[CH_COLOR + 2]);
    let m = Vec3::new(r[CH_AXIS], r[CH_AXIS + 1], r[CH_AXIS + 2]);
    let n = m.norm();
    if n < AXIS_EPS {
        return color;
    }
    let sigma = decode_sigma(r[CH_SIGMA]);
    color * (-(1.0 - v.dot(&m) / n) / (sigma * sigma)).exp()
}

/// Channel gradients of `g · emission(r, v)` with respect to the raw record
/// (α slot left at zero).
fn emission_backward(r: &VoxelRecord, v: &Vec3, g: &Rgb) -> VoxelRecord {
    let mut out = [0.0; CHANNELS];
    let color = Rgb::new(r[CH_COLOR], r[CH_COLOR + 1], r[CH_COLOR + 2]);
    let m = Vec3::new(r[CH_AXIS], r[CH_AXIS + 1], r[CH_AXIS + 2]);
    let n = m.norm();
    if n < AXIS_EPS {
        out[CH_COLOR..CH_COLOR + 3].copy_from_slice(g.as_slice());
        return out;
    }
    let s_raw = r[CH_SIGMA];
    let sigma = decode_sigma(s_raw);
    let mu = m / n;
    let d = v.dot(&mu);
    let inv_s2 = 1.0 / (sigma * sigma);
    let w = (-(1.0 - d) * inv_s2).exp();
    for c in 0..3 {
        out[CH_COLOR + c] = g[c] * w;
    }
    let gw = g.dot(&color);
    let gd = gw * w * inv_s2;
    let g_mu = v * gd;
    let g_m = (g_mu - mu * mu.dot(&g_mu)) / n;
    for a in 0..3 {
        out[CH_AXIS + a] = g_m[a];
    }
    let g_sigma = gw * w * 2.0 * (1.0 - d) * inv_s2 / sigma;
    out[CH_SIGMA] = g_sigma * logistic(s_raw);
    out
}

/// Incident HDR radiance arriving at `ray.origin` from `ray.direction`.
pub fn composite_radiance(ray: &Ray, volume: &VsgVolume, cfg: &MarchConfig) -> Rgb {
    let v = -ray.direction;
    let mut acc = Rgb::zeros();
    let mut trans = 1.0;
    march(ray, volume, cfg.sampling, |t| {
        let Some(s) = volume.stencil(&ray.at(t), cfg.interp) else {
            return true;
        };
        let mut a = 0.0;
        for k in 0..s.len {
            a += s.w[k] * volume.records()[s.idx[k]][CH_ALPHA];
        }
        if a == 0.0 {
            return true;
        }
        let rec = volume.gather(&s);
        acc += emission(&rec, &v) * (trans * a);
        trans *= 1.0 - a;
        trans != 0.0
    });
    acc
}

/// Alpha-composited distance along the ray; residual transmittance lands on
/// the bounds exit. Returns 0 for rays that miss the bounds.
pub fn composite_depth(ray: &Ray, volume: &VsgVolume, cfg: &MarchConfig) -> f64 {
    let mut acc = 0.0;
    let mut trans = 1.0;
    let exit = march(ray, volume, cfg.sampling, |t| {
        let Some(s) = volume.stencil(&ray.at(t), cfg.interp) else {
            return true;
        };
        let mut a = 0.0;
        for k in 0..s.len {
            a += s.w[k] * volume.records()[s.idx[k]][CH_ALPHA];
        }
        acc += trans * a * t;
        trans *= 1.0 - a;
        trans != 0.0
    });
    match exit {
        Some(t_exit) => acc + trans * t_exit,
        None => 0.0,
    }
}

struct TraceSample {
    stencil: Stencil,
    rec: VoxelRecord,
    t: f64,
    trans: f64,
}

fn trace(ray: &Ray, volume: &VsgVolume, cfg: &MarchConfig) -> (Vec<TraceSample>, Option<f64>) {
    let mut samples = Vec::new();
    let mut trans = 1.0;
    let exit = march(ray, volume, cfg.sampling, |t| {
        let Some(s) = volume.stencil(&ray.at(t), cfg.interp) else {
            return true;
        };
        let rec = volume.gather(&s);
        samples.push(TraceSample {
            stencil: s,
            rec,
            t,
            trans,
        });
        trans *= 1.0 - rec[CH_ALPHA];
        trans != 0.0
    });
    (samples, exit)
}

/// Forward radiance plus accumulation of `g_out · ∂R/∂(voxel channels)` into `sink`.
pub fn composite_radiance_backward<S: GradSink + ?Sized>(
    ray: &Ray,
    volume: &VsgVolume,
    cfg: &MarchConfig,
    g_out: &Rgb,
    sink: &mut S,
) -> Rgb {
    let v = -ray.direction;
    let (samples, _) = trace(ray, volume, cfg);
    let emis: Vec<Rgb> = samples.iter().map(|s| emission(&s.rec, &v)).collect();
    let value = samples
        .iter()
        .zip(&emis)
        .fold(Rgb::zeros(), |acc, (s, e)| acc + e * (s.trans * s.rec[CH_ALPHA]));
    if g_out.iter().all(|&g| g == 0.0) {
        return value;
    }
    let mut behind = Rgb::zeros();
    for (s, e) in samples.iter().zip(&emis).rev() {
        let a = s.rec[CH_ALPHA];
        let g_e = g_out * (s.trans * a);
        let mut g = emission_backward(&s.rec, &v, &g_e);
        g[CH_ALPHA] = s.trans * g_out.dot(&(e - behind));
        sink.add_stencil(&s.stencil, &g);
        behind = e * a + behind * (1.0 - a);
    }
    value
}

/// Forward depth plus accumulation of `g_out · ∂D/∂α` into `sink`.
pub fn composite_depth_backward<S: GradSink + ?Sized>(
    ray: &Ray,
    volume: &VsgVolume,
    cfg: &MarchConfig,
    g_out: f64,
    sink: &mut S,
) -> f64 {
    let (samples, exit) = trace(ray, volume, cfg);
    let Some(t_exit) = exit else {
        return 0.0;
    };
    let residual = samples
        .last()
        .map_or(1.0, |s| s.trans * (1.0 - s.rec[CH_ALPHA]));
    let value = samples
        .iter()
        .fold(residual * t_exit, |acc, s| acc + s.trans * s.rec[CH_ALPHA] * s.t);
    if g_out == 0.0 {
        return value;
    }
    let mut behind = t_exit;
    for s in samples.iter().rev() {
        let a = s.rec[CH_ALPHA];
        let mut g = [0.0; CHANNELS];
        g[CH_ALPHA] = g_out * s.trans * (s.t - behind);
        sink.add_stencil(&s.stencil, &g);
        behind = s.t * a + behind * (1.0 - a);
    }
    value
}

/// Rays per work unit in the batched passes. Fixed so that reductions happen
/// in the same order for any thread count.
pub const RAY_CHUNK: usize = 64;

pub fn radiance_batch(rays: &[Ray], volume: &VsgVolume, cfg: &MarchConfig) -> Vec<Rgb> {
    rays.par_iter().map(|r| composite_radiance(r, volume, cfg)).collect()
}

pub fn depth_batch(rays: &[Ray], volume: &VsgVolume, cfg: &MarchConfig) -> Vec<f64> {
    rays.par_iter().map(|r| composite_depth(r, volume, cfg)).collect()
}

/// Accumulates `Σ_r g_r · ∂R_r/∂(voxel channels)` into `out`.
pub fn radiance_batch_backward(rays: &[Ray], grads: &[Rgb], volume: &VsgVolume, cfg: &MarchConfig, out: &mut [VoxelRecord]) {
    let parts: Vec<GradBuffer> = rays
        .par_chunks(RAY_CHUNK)
        .zip(grads.par_chunks(RAY_CHUNK))
        .map(|(rs, gs)| {
            let mut buf = GradBuffer::for_volume(volume);
            for (r, g) in rs.iter().zip(gs) {
                if g.iter().any(|&x| x != 0.0) {
                    composite_radiance_backward(r, volume, cfg, g, &mut buf);
                }
            }
            buf
        })
        .collect();
    for p in &parts {
        p.merge_into(out);
    }
}

/// Accumulates `Σ_r g_r · ∂D_r/∂α` into `out`.
pub fn depth_batch_backward(rays: &[Ray], grads: &[f64], volume: &VsgVolume, cfg: &MarchConfig, out: &mut [VoxelRecord]) {
    let parts: Vec<GradBuffer> = rays
        .par_chunks(RAY_CHUNK)
        .zip(grads.par_chunks(RAY_CHUNK))
        .map(|(rs, gs)| {
            let mut buf = GradBuffer::for_volume(volume);
            for (r, &g) in rs.iter().zip(gs) {
                if g != 0.0 {
                    composite_depth_backward(r, volume, cfg, g, &mut buf);
                }
            }
            buf
        })
        .collect();
    for p in &parts {
        p.merge_into(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Aabb, SphericalGaussian};

    fn line_volume(n: usize) -> VsgVolume {
        VsgVolume::empty([n, 1, 1], Aabb::new(Vec3::zeros(), Vec3::new(n as f64, 1.0, 1.0))).unwrap()
    }

    #[test]
    fn transparent_volume_is_black() {
        let v = line_volume(4);
        let ray = Ray::new(Vec3::new(-1.0, 0.5, 0.5), Vec3::x());
        assert_eq!(composite_radiance(&ray, &v, &MarchConfig::default()), Rgb::zeros());
    }

    #[test]
    fn single_opaque_voxel_returns_its_color() {
        let mut v = line_volume(1);
        v.set(0, 1.0, &SphericalGaussian::isotropic(Rgb::new(0.3, 2.0, 7.0)));
        let ray = Ray::new(Vec3::new(-1.0, 0.5, 0.5), Vec3::x());
        let cfg = MarchConfig::uniform(1, Interp::Nearest);
        assert_eq!(composite_radiance(&ray, &v, &cfg), Rgb::new(0.3, 2.0, 7.0));
    }

    #[test]
    fn two_voxel_hand_composite() {
        let mut v = line_volume(2);
        let g1 = Rgb::new(1.0, 0.0, 0.5);
        let g2 = Rgb::new(0.0, 4.0, 1.0);
        v.set(0, 0.5, &SphericalGaussian::isotropic(g1));
        v.set(1, 1.0, &SphericalGaussian::isotropic(g2));
        let ray = Ray::new(Vec3::new(-1.0, 0.5, 0.5), Vec3::x());
        let got = composite_radiance(&ray, &v, &MarchConfig::uniform(2, Interp::Nearest));
        assert!((got - (g1 * 0.5 + g2 * 0.5)).norm() < 1e-15);
    }

    #[test]
    fn depth_of_opaque_and_empty() {
        let mut v = line_volume(8);
        let ray = Ray::new(Vec3::new(0.0, 0.5, 0.5), Vec3::x());
        let cfg = MarchConfig::uniform(8, Interp::Nearest);
        assert!((composite_depth(&ray, &v, &cfg) - 8.0).abs() < 1e-12);
        v.set_alpha(5, 1.0);
        let d = composite_depth(&ray, &v, &cfg);
        assert!((d - 5.5).abs() <= 1.0, "depth {d}");
    }

    #[test]
    fn voxel_crossings_visit_each_cell_once() {
        let v = VsgVolume::empty([4, 4, 4], Aabb::new(Vec3::zeros(), Vec3::repeat(1.0))).unwrap();
        let ray = Ray::new(Vec3::new(-0.5, 0.13, 0.61), Vec3::new(1.0, 0.31, -0.2));
        let mut cells = Vec::new();
        march(&ray, &v, Sampling::VoxelCrossings, |t| {
            cells.push(v.voxel_at(&ray.at(t)).unwrap());
            true
        });
        let mut dedup = cells.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), cells.len());
        assert!(cells.len() >= 4);
    }

    #[test]
    fn backward_value_matches_forward() {
        let mut v = line_volume(3);
        for i in 0..3 {
            let sg = SphericalGaussian::new(Rgb::new(1.0, 0.5, 0.25) * (i + 1) as f64, Vec3::new(-1.0, 0.2, 0.0), 0.8);
            v.set(i, 0.3, &sg);
        }
        let ray = Ray::new(Vec3::new(-1.0, 0.4, 0.6), Vec3::new(1.0, 0.05, -0.02));
        let cfg = MarchConfig::uniform(17, Interp::Trilinear);
        let mut sink = GradBuffer::for_volume(&v);
        let a = composite_radiance_backward(&ray, &v, &cfg, &Rgb::new(1.0, 1.0, 1.0), &mut sink);
        let b = composite_radiance(&ray, &v, &cfg);
        assert!((a - b).norm() < 1e-14);
        let mut sink = GradBuffer::for_volume(&v);
        let da = composite_depth_backward(&ray, &v, &cfg, 1.0, &mut sink);
        assert!((da - composite_depth(&ray, &v, &cfg)).abs() < 1e-14);
    }
}

//! Gradient storage and finite-difference verification.

use std::collections::HashMap;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math::{logistic, Rgb, Vec3};
use crate::volume::{Stencil, VoxelRecord, VsgVolume, CHANNELS, CH_ALPHA, CH_SIGMA};

/// Receives per-sample channel gradients and scatters them over a stencil.
pub trait GradSink {
    fn add_stencil(&mut self, stencil: &Stencil, g: &VoxelRecord);
}

/// Volumes up to this many voxels accumulate densely.
const DENSE_LIMIT: usize = 1 << 16;

/// Per-worker gradient accumulator over volume voxels. Dense for small
/// grids, hashed otherwise.
#[derive(Clone, Debug)]
pub enum GradBuffer {
    Dense(Vec<VoxelRecord>),
    Sparse(HashMap<usize, VoxelRecord>),
}

impl GradBuffer {
    pub fn for_volume(volume: &VsgVolume) -> Self {
        Self::with_len(volume.len())
    }

    pub fn with_len(n: usize) -> Self {
        if n <= DENSE_LIMIT {
            GradBuffer::Dense(vec![[0.0; CHANNELS]; n])
        } else {
            GradBuffer::Sparse(HashMap::new())
        }
    }

    /// Adds this buffer into `out`. Each voxel receives one addition, so the
    /// result does not depend on hash iteration order.
    pub fn merge_into(&self, out: &mut [VoxelRecord]) {
        match self {
            GradBuffer::Dense(d) => {
                for (o, g) in out.iter_mut().zip(d) {
                    for c in 0..CHANNELS {
                        o[c] += g[c];
                    }
                }
            }
            GradBuffer::Sparse(m) => {
                for (&i, g) in m {
                    for c in 0..CHANNELS {
                        out[i][c] += g[c];
                    }
                }
            }
        }
    }
}

impl GradSink for GradBuffer {
    fn add_stencil(&mut self, s: &Stencil, g: &VoxelRecord) {
        for k in 0..s.len {
            let w = s.w[k];
            if w == 0.0 {
                continue;
            }
            let slot = match self {
                GradBuffer::Dense(d) => &mut d[s.idx[k]],
                GradBuffer::Sparse(m) => m.entry(s.idx[k]).or_insert([0.0; CHANNELS]),
            };
            for c in 0..CHANNELS {
                slot[c] += w * g[c];
            }
        }
    }
}

impl GradSink for [VoxelRecord] {
    fn add_stencil(&mut self, s: &Stencil, g: &VoxelRecord) {
        for k in 0..s.len {
            let w = s.w[k];
            if w == 0.0 {
                continue;
            }
            let slot = &mut self[s.idx[k]];
            for c in 0..CHANNELS {
                slot[c] += w * g[c];
            }
        }
    }
}

/// Gradients of a scalar loss with respect to every volume channel and every
/// surface-buffer entry.
///
/// `volume` is laid out like [`VsgVolume`] records: `(α, c, μ_raw, σ_raw)`.
/// Surface gradients are empty when no surface buffers took part.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTape {
    pub volume: Vec<VoxelRecord>,
    pub albedo: Vec<Rgb>,
    pub normal: Vec<Vec3>,
    pub depth: Vec<f64>,
}

impl GradientTape {
    pub fn zeros(voxels: usize, pixels: usize) -> Self {
        Self {
            volume: vec![[0.0; CHANNELS]; voxels],
            albedo: vec![Rgb::zeros(); pixels],
            normal: vec![Vec3::zeros(); pixels],
            depth: vec![0.0; pixels],
        }
    }

    /// Same gradients with the σ slot taken with respect to decoded σ instead of σ_raw.
    pub fn decoded_volume(&self, volume: &VsgVolume) -> Vec<VoxelRecord> {
        self.volume
            .iter()
            .zip(volume.records())
            .map(|(g, r)| {
                let mut out = *g;
                out[CH_SIGMA] = g[CH_SIGMA] / logistic(r[CH_SIGMA]);
                out
            })
            .collect()
    }

    /// Same gradients with the α slot taken with respect to the α logit.
    pub fn logit_space(&self, volume: &VsgVolume) -> Vec<VoxelRecord> {
        self.volume
            .iter()
            .zip(volume.records())
            .map(|(g, r)| {
                let a = r[CH_ALPHA];
                let mut out = *g;
                out[CH_ALPHA] = g[CH_ALPHA] * a * (1.0 - a);
                out
            })
            .collect()
    }

    /// `self += s · other`, elementwise.
    pub fn add_scaled(&mut self, other: &GradientTape, s: f64) {
        for (a, b) in self.volume.iter_mut().zip(&other.volume) {
            for c in 0..CHANNELS {
                a[c] += s * b[c];
            }
        }
        for (a, b) in self.albedo.iter_mut().zip(&other.albedo) {
            *a += b * s;
        }
        for (a, b) in self.normal.iter_mut().zip(&other.normal) {
            *a += b * s;
        }
        for (a, b) in self.depth.iter_mut().zip(&other.depth) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        let v = self.volume.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        let a = self.albedo.iter().chain(&self.normal).flat_map(|x| x.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
        let d = self.depth.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        v.max(a).max(d)
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs() == 0.0
    }
}

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn num_params(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, value: f64);
    fn value(&mut self) -> f64;
    fn gradient(&mut self) -> Vec<f64>;
    fn param_name(&self, i: usize) -> String {
        format!("param[{i}]")
    }
}

/// Closure-backed [`Differentiable`].
pub struct FnDifferentiable<F, G> {
    pub params: Vec<f64>,
    f: F,
    g: G,
}

impl<F, G> FnDifferentiable<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    pub fn new(params: Vec<f64>, f: F, g: G) -> Self {
        Self { params, f, g }
    }
}

impl<F, G> Differentiable for FnDifferentiable<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn num_params(&self) -> usize {
        self.params.len()
    }
    fn param(&self, i: usize) -> f64 {
        self.params[i]
    }
    fn set_param(&mut self, i: usize, value: f64) {
        self.params[i] = value;
    }
    fn value(&mut self) -> f64 {
        (self.f)(&self.params)
    }
    fn gradient(&mut self) -> Vec<f64> {
        (self.g)(&self.params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub index: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeResult>,
    pub max_rel_error: f64,
    pub worst: Option<ProbeResult>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "probes: {}", self.probes.len())?;
        writeln!(f, "max relative error: {:.3e}", self.max_rel_error)?;
        if let Some(w) = &self.worst {
            writeln!(
                f,
                "worst: {} (index {}) analytic {:.9e} numeric {:.9e}",
                w.name, w.index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central difference with step `1e-4 · max(1, |θ|)`.
pub fn central_difference<D: Differentiable + ?Sized>(f: &mut D, i: usize) -> f64 {
    let x = f.param(i);
    let h = 1e-4 * x.abs().max(1.0);
    f.set_param(i, x + h);
    let fp = f.value();
    f.set_param(i, x - h);
    let fm = f.value();
    f.set_param(i, x);
    (fp - fm) / (2.0 * h)
}

/// Compares the analytic gradient with central differences on `n_probes`
/// parameters drawn uniformly (without replacement while possible).
pub fn grad_check<D: Differentiable + ?Sized>(f: &mut D, n_probes: usize, seed: u64) -> GradCheckReport {
    let n = f.num_params();
    let analytic = f.gradient();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if n_probes >= n {
        (0..n).collect()
    } else {
        let mut v = sample(&mut rng, n, n_probes).into_vec();
        v.sort_unstable();
        v
    };
    let mut probes = Vec::with_capacity(picks.len());
    for i in picks {
        let numeric = central_difference(f, i);
        probes.push(ProbeResult {
            index: i,
            name: f.param_name(i),
            analytic: analytic[i],
            numeric,
            rel_error: relative_error(analytic[i], numeric),
        });
    }
    let worst = probes
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .cloned();
    GradCheckReport {
        max_rel_error: worst.as_ref().map_or(0.0, |w| w.rel_error),
        worst,
        probes,
    }
}

/// Left and right one-sided difference quotients of `f` at `x`.
pub fn one_sided_derivatives(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    let fx = f(x);
    ((fx - f(x - h)) / h, (f(x + h) - fx) / h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = [0.5, -2.0, 3.25, 7.0];
        let mut f = FnDifferentiable::new(
            vec![1.0, 2.0, -3.0, 0.1],
            move |p| p.iter().zip(w).map(|(x, w)| x * w).sum(),
            move |_| w.to_vec(),
        );
        let r = grad_check(&mut f, 4, 0);
        assert!(r.max_rel_error <= 1e-10, "{r}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut f = FnDifferentiable::new(vec![1.0, 2.0], |p| p[0] * p[0] + p[1], |p| vec![p[0], 1.0]);
        let r = grad_check(&mut f, 2, 0);
        assert!(r.max_rel_error > 0.4);
        assert_eq!(r.worst.unwrap().index, 0);
    }

    #[test]
    fn probe_selection_is_seeded() {
        let mk = || FnDifferentiable::new(vec![0.0; 100], |p| p.iter().sum(), |p| vec![1.0; p.len()]);
        let a: Vec<_> = grad_check(&mut mk(), 10, 7).probes.iter().map(|p| p.index).collect();
        let b: Vec<_> = grad_check(&mut mk(), 10, 7).probes.iter().map(|p| p.index).collect();
        let c: Vec<_> = grad_check(&mut mk(), 10, 8).probes.iter().map(|p| p.index).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sparse_and_dense_agree() {
        let s = Stencil {
            idx: [3, 4, 5, 6, 0, 0, 0, 0],
            w: [0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0],
            len: 8,
        };
        let g = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let mut dense = GradBuffer::Dense(vec![[0.0; CHANNELS]; 10]);
        let mut sparse = GradBuffer::Sparse(HashMap::new());
        dense.add_stencil(&s, &g);
        sparse.add_stencil(&s, &g);
        let mut a = vec![[0.0; CHANNELS]; 10];
        let mut b = vec![[0.0; CHANNELS]; 10];
        dense.merge_into(&mut a);
        sparse.merge_into(&mut b);
        assert_eq!(a, b);
        assert_eq!(a[4][7], 2.0);
    }
}

//! The VSG grid: per-voxel opacity plus a spherical Gaussian emission lobe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{softplus, softplus_inv, Rgb, Vec3};

/// Stored scalars per voxel, in channel order `(α, c_r, c_g, c_b, μ_x, μ_y, μ_z, σ_raw)`.
pub const CHANNELS: usize = 8;
pub const CH_ALPHA: usize = 0;
pub const CH_COLOR: usize = 1;
pub const CH_AXIS: usize = 4;
pub const CH_SIGMA: usize = 7;

/// Added to `softplus(σ_raw)` so that decoded sharpness never reaches zero.
pub const SIGMA_FLOOR: f64 = 1e-3;
/// Axes shorter than this are treated as an isotropic lobe.
pub const AXIS_EPS: f64 = 1e-6;

pub type VoxelRecord = [f64; CHANNELS];

pub fn decode_sigma(raw: f64) -> f64 {
    softplus(raw) + SIGMA_FLOOR
}

pub fn encode_sigma(sigma: f64) -> f64 {
    softplus_inv((sigma - SIGMA_FLOOR).max(f64::MIN_POSITIVE))
}

/// One voxel's emission lobe `c · exp(-(1 - v·μ) / σ²)`.
///
/// `axis` is kept unnormalized; evaluation normalizes it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalGaussian {
    pub color: Rgb,
    pub axis: Vec3,
    pub sigma: f64,
}

impl SphericalGaussian {
    pub fn new(color: Rgb, axis: Vec3, sigma: f64) -> Self {
        Self { color, axis, sigma }
    }

    pub fn isotropic(color: Rgb) -> Self {
        Self {
            color,
            axis: Vec3::zeros(),
            sigma: 1.0,
        }
    }

    pub fn is_isotropic(&self) -> bool {
        self.axis.norm() < AXIS_EPS
    }

    /// Scalar lobe factor in `(0, 1]`.
    pub fn lobe(&self, v: &Vec3) -> f64 {
        let n = self.axis.norm();
        if n < AXIS_EPS {
            return 1.0;
        }
        let cos = v.dot(&self.axis) / n;
        (-(1.0 - cos) / (self.sigma * self.sigma)).exp()
    }

    pub fn eval(&self, v: &Vec3) -> Rgb {
        self.color * self.lobe(v)
    }
}

pub fn sg_eval(v: &Vec3, sg: &SphericalGaussian) -> Rgb {
    sg.eval(v)
}

/// Axis-aligned box given by its min corner and extent, in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub extent: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, extent: Vec3) -> Self {
        Self { min, extent }
    }

    pub fn from_corners(lo: Vec3, hi: Vec3) -> Self {
        Self {
            min: lo,
            extent: hi - lo,
        }
    }

    pub fn centered(center: Vec3, size: f64) -> Self {
        let half = Vec3::repeat(size * 0.5);
        Self {
            min: center - half,
            extent: Vec3::repeat(size),
        }
    }

    pub fn max(&self) -> Vec3 {
        self.min + self.extent
    }

    pub fn center(&self) -> Vec3 {
        self.min + self.extent * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let hi = self.max();
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= hi[i])
    }

    /// Parametric span `[t_enter, t_exit]` of the ray inside the box, with
    /// `t_enter` clamped to 0 so origins inside the box start at the origin.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        let hi = self.max();
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let o = ray.origin[i];
            let d = ray.direction[i];
            if d == 0.0 {
                if o < self.min[i] || o > hi[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut a, mut b) = ((self.min[i] - o) * inv, (hi[i] - o) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t1 > t0).then_some((t0, t1))
    }
}

/// Metric ray with unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// How grid channels are read at a continuous point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    #[default]
    Trilinear,
}

/// Voxel indices and weights contributing to one grid read.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub len: usize,
}

/// Dense `X × Y × Z` grid of 8-channel voxel records over a metric box.
///
/// Voxel `(x, y, z)` lives at linear index `x + X·(y + Y·z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VsgVolume {
    dims: [usize; 3],
    bounds: Aabb,
    voxels: Vec<VoxelRecord>,
}

impl VsgVolume {
    /// Fully transparent volume with black isotropic lobes (σ = 1).
    pub fn empty(dims: [usize; 3], bounds: Aabb) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!("volume dims must be positive, got {dims:?}")));
        }
        if (0..3).any(|i| !(bounds.extent[i] > 0.0)) {
            return Err(Error::Invalid("volume extent must be positive".into()));
        }
        let mut rec = [0.0; CHANNELS];
        rec[CH_SIGMA] = encode_sigma(1.0);
        Ok(Self {
            dims,
            bounds,
            voxels: vec![rec; dims[0] * dims[1] * dims[2]],
        })
    }

    /// Builds a volume from raw records (σ channel already in raw space).
    pub fn from_records(dims: [usize; 3], bounds: Aabb, voxels: Vec<VoxelRecord>) -> Result<Self> {
        let mut v = Self::empty(dims, bounds)?;
        if voxels.len() != v.voxels.len() {
            return Err(Error::Shape(format!(
                "expected {} voxel records, got {}",
                v.voxels.len(),
                voxels.len()
            )));
        }
        v.voxels = voxels;
        Ok(v)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn records(&self) -> &[VoxelRecord] {
        &self.voxels
    }

    pub fn records_mut(&mut self) -> &mut [VoxelRecord] {
        &mut self.voxels
    }

    pub fn voxel_size(&self) -> Vec3 {
        Vec3::new(
            self.bounds.extent.x / self.dims[0] as f64,
            self.bounds.extent.y / self.dims[1] as f64,
            self.bounds.extent.z / self.dims[2] as f64,
        )
    }

    pub fn max_voxel_edge(&self) -> f64 {
        self.voxel_size().max()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn voxel_center(&self, i: usize) -> Vec3 {
        let [x, y, z] = self.coords(i);
        let vs = self.voxel_size();
        self.bounds.min + Vec3::new((x as f64 + 0.5) * vs.x, (y as f64 + 0.5) * vs.y, (z as f64 + 0.5) * vs.z)
    }

    /// Voxel containing `p`, if inside the bounds. Points on the max faces
    /// belong to the last voxel.
    pub fn voxel_at(&self, p: &Vec3) -> Option<usize> {
        if !self.bounds.contains(p) {
            return None;
        }
        let vs = self.voxel_size();
        let mut c = [0usize; 3];
        for a in 0..3 {
            let g = ((p[a] - self.bounds.min[a]) / vs[a]).floor();
            c[a] = (g.max(0.0) as usize).min(self.dims[a] - 1);
        }
        Some(self.index(c[0], c[1], c[2]))
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.voxels[i][CH_ALPHA]
    }

    pub fn sg(&self, i: usize) -> SphericalGaussian {
        decode_record(&self.voxels[i]).1
    }

    pub fn set(&mut self, i: usize, alpha: f64, sg: &SphericalGaussian) {
        self.voxels[i] = encode_record(alpha, sg);
    }

    pub fn set_alpha(&mut self, i: usize, alpha: f64) {
        self.voxels[i][CH_ALPHA] = alpha;
    }

    /// Checks the stored-value invariants: α ∈ [0,1], c ≥ 0, finite entries.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.voxels.iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("voxel {i} has a non-finite channel")));
            }
            if !(0.0..=1.0).contains(&r[CH_ALPHA]) {
                return Err(Error::Invalid(format!("voxel {i} alpha {} outside [0,1]", r[CH_ALPHA])));
            }
            if r[CH_COLOR..CH_COLOR + 3].iter().any(|&c| c < 0.0) {
                return Err(Error::Invalid(format!("voxel {i} has negative radiance")));
            }
        }
        Ok(())
    }

    /// Grid stencil for a point, or `None` outside the bounds.
    pub fn stencil(&self, p: &Vec3, interp: Interp) -> Option<Stencil> {
        if !self.bounds.contains(p) {
            return None;
        }
        match interp {
            Interp::Nearest => {
                let i = self.voxel_at(p)?;
                let mut s = Stencil {
                    idx: [0; 8],
                    w: [0.0; 8],
                    len: 1,
                };
                s.idx[0] = i;
                s.w[0] = 1.0;
                Some(s)
            }
            Interp::Trilinear => {
                let vs = self.voxel_size();
                let mut lo = [0usize; 3];
                let mut hi = [0usize; 3];
                let mut t = [0.0f64; 3];
                for a in 0..3 {
                    let g = (p[a] - self.bounds.min[a]) / vs[a] - 0.5;
                    let f = g.floor();
                    let last = self.dims[a] as isize - 1;
                    let i0 = f as isize;
                    lo[a] = i0.clamp(0, last) as usize;
                    hi[a] = (i0 + 1).clamp(0, last) as usize;
                    t[a] = g - f;
                }
                let mut s = Stencil {
                    idx: [0; 8],
                    w: [0.0; 8],
                    len: 8,
                };
                for corner in 0..8 {
                    let (bx, by, bz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                    let x = if bx == 1 { hi[0] } else { lo[0] };
                    let y = if by == 1 { hi[1] } else { lo[1] };
                    let z = if bz == 1 { hi[2] } else { lo[2] };
                    let wx = if bx == 1 { t[0] } else { 1.0 - t[0] };
                    let wy = if by == 1 { t[1] } else { 1.0 - t[1] };
                    let wz = if bz == 1 { t[2] } else { 1.0 - t[2] };
                    s.idx[corner] = self.index(x, y, z);
                    s.w[corner] = wx * wy * wz;
                }
                Some(s)
            }
        }
    }

    /// Weighted sum of raw records over a stencil.
    pub fn gather(&self, s: &Stencil) -> VoxelRecord {
        let mut out = [0.0; CHANNELS];
        for k in 0..s.len {
            let w = s.w[k];
            if w == 0.0 {
                continue;
            }
            let r = &self.voxels[s.idx[k]];
            for c in 0..CHANNELS {
                out[c] += w * r[c];
            }
        }
        out
    }

    /// Raw interpolated record at a point; outside the bounds the record is
    /// the empty one (α = 0).
    pub fn sample_raw(&self, p: &Vec3, interp: Interp) -> VoxelRecord {
        match self.stencil(p, interp) {
            Some(s) => self.gather(&s),
            None => {
                let mut r = [0.0; CHANNELS];
                r[CH_SIGMA] = encode_sigma(1.0);
                r
            }
        }
    }
}

/// Reads `(α, lobe)` at a point.
pub fn sample_grid(point: &Vec3, volume: &VsgVolume, mode: Interp) -> (f64, SphericalGaussian) {
    decode_record(&volume.sample_raw(point, mode))
}

pub fn decode_record(r: &VoxelRecord) -> (f64, SphericalGaussian) {
    (
        r[CH_ALPHA],
        SphericalGaussian {
            color: Rgb::new(r[1], r[2], r[3]),
            axis: Vec3::new(r[4], r[5], r[6]),
            sigma: decode_sigma(r[CH_SIGMA]),
        },
    )
}

pub fn encode_record(alpha: f64, sg: &SphericalGaussian) -> VoxelRecord {
    [
        alpha,
        sg.color.x,
        sg.color.y,
        sg.color.z,
        sg.axis.x,
        sg.axis.y,
        sg.axis.z,
        encode_sigma(sg.sigma),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_volume(dims: [usize; 3]) -> VsgVolume {
        VsgVolume::empty(dims, Aabb::new(Vec3::zeros(), Vec3::repeat(1.0))).unwrap()
    }

    #[test]
    fn sg_peak_and_antipode() {
        let sg = SphericalGaussian::new(Rgb::new(1.0, 2.0, 3.0), Vec3::new(0.0, 0.0, 2.0), 1.0);
        let mu = Vec3::z();
        assert_eq!(sg.eval(&mu), sg.color);
        let back = sg.eval(&-mu);
        let e2 = (-2.0f64).exp();
        assert!((back - sg.color * e2).norm() < 1e-15);
    }

    #[test]
    fn sg_wide_lobe_is_nearly_constant() {
        let sg = SphericalGaussian::new(Rgb::new(4.0, 1.0, 0.5), Vec3::new(0.3, -1.0, 0.2), 100.0);
        for v in [Vec3::x(), -Vec3::y(), Vec3::new(1.0, 1.0, 1.0).normalize()] {
            let g = sg.eval(&v);
            for c in 0..3 {
                assert!(g[c] <= sg.color[c]);
                assert!(sg.color[c] - g[c] <= sg.color[c] * 2e-4);
            }
        }
    }

    #[test]
    fn degenerate_axis_is_isotropic() {
        let sg = SphericalGaussian::new(Rgb::repeat(0.7), Vec3::new(1e-7, 0.0, 0.0), 0.1);
        assert_eq!(sg.eval(&-Vec3::x()), Rgb::repeat(0.7));
    }

    #[test]
    fn sigma_encoding_is_positive_and_invertible() {
        for s in [1e-3 + 1e-9, 0.01, 0.5, 1.0, 100.0] {
            let back = decode_sigma(encode_sigma(s));
            assert!((back - s).abs() < 1e-12 * s.max(1.0), "{s} -> {back}");
        }
        assert!(decode_sigma(-1e3) > 0.0);
    }

    #[test]
    fn voxel_center_reads_back_exactly() {
        let mut v = unit_volume([4, 3, 2]);
        let i = v.index(2, 1, 1);
        let sg = SphericalGaussian::new(Rgb::new(0.2, 0.4, 0.6), Vec3::new(0.0, 1.0, 0.0), 0.7);
        v.set(i, 0.8, &sg);
        let c = v.voxel_center(i);
        for mode in [Interp::Nearest, Interp::Trilinear] {
            let (a, got) = sample_grid(&c, &v, mode);
            assert!((a - 0.8).abs() < 1e-15);
            assert!((got.color - sg.color).norm() < 1e-15);
            assert!((got.sigma - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_bounds_is_transparent() {
        let mut v = unit_volume([2, 2, 2]);
        for i in 0..v.len() {
            v.set_alpha(i, 1.0);
        }
        for mode in [Interp::Nearest, Interp::Trilinear] {
            let (a, _) = sample_grid(&Vec3::new(1.5, 0.5, 0.5), &v, mode);
            assert_eq!(a, 0.0);
        }
    }

    #[test]
    fn trilinear_midpoint_blends_alpha() {
        let mut v = unit_volume([2, 1, 1]);
        v.set_alpha(1, 1.0);
        let (a, _) = sample_grid(&Vec3::new(0.5, 0.5, 0.5), &v, Interp::Trilinear);
        assert!((a - 0.5).abs() < 1e-15);
        // clamped beyond the last center
        let (a, _) = sample_grid(&Vec3::new(0.9, 0.5, 0.5), &v, Interp::Trilinear);
        assert!((a - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ray_box_spans() {
        let b = Aabb::new(Vec3::zeros(), Vec3::repeat(1.0));
        let r = Ray::new(Vec3::new(-1.0, 0.5, 0.5), Vec3::x());
        assert_eq!(b.intersect(&r), Some((1.0, 2.0)));
        let inside = Ray::new(Vec3::repeat(0.5), Vec3::y());
        assert_eq!(b.intersect(&inside), Some((0.0, 0.5)));
        let miss = Ray::new(Vec3::new(-1.0, 2.0, 0.5), Vec3::x());
        assert_eq!(b.intersect(&miss), None);
    }
}

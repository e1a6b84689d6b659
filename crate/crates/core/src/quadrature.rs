//! Fibonacci-lattice hemisphere quadrature.
//!
//! Node `i` of `K` sits at height `z_i = 1 - (i + 0.5)/K` above the tangent
//! plane with azimuth `i · π(3 - √5)`, in a tangent frame built from the
//! normal by [`orthonormal_basis`]. Every node carries the solid angle `2π/K`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3};

use crate::math::{orthonormal_basis, Vec3};

pub const GOLDEN_ANGLE: f64 = PI * (3.0 - 2.236_067_977_499_79);

#[derive(Clone, Debug, PartialEq)]
pub struct HemisphereQuadrature {
    pub directions: Vec<Vec3>,
    pub delta_omega: f64,
}

impl HemisphereQuadrature {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// `Σ max(l·n, 0) ΔΩ`, which should approach π.
    pub fn cosine_sum(&self, n: &Vec3) -> f64 {
        self.directions.iter().map(|l| l.dot(n).max(0.0)).sum::<f64>() * self.delta_omega
    }
}

/// Lattice node `i` of `k` in the local frame (+z = normal), with an extra
/// azimuthal offset.
fn lattice_local(i: usize, k: usize, twist: f64) -> Vec3 {
    let z = 1.0 - (i as f64 + 0.5) / k as f64;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = i as f64 * GOLDEN_ANGLE + twist;
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// `K` lattice directions around `normal`, tangent frame from [`orthonormal_basis`].
pub fn fibonacci_hemisphere(normal: &Vec3, k: usize) -> HemisphereQuadrature {
    fibonacci_hemisphere_twisted(normal, k, 0.0)
}

/// Like [`fibonacci_hemisphere`] with the lattice spun by `twist` radians
/// about the normal. Shading gives each pixel its own twist so that
/// neighbor sharing adds new directions instead of duplicates.
pub fn fibonacci_hemisphere_twisted(normal: &Vec3, k: usize, twist: f64) -> HemisphereQuadrature {
    let n = normal.normalize();
    let (t, b) = orthonormal_basis(&n);
    let frame = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[t, b, n]));
    fibonacci_hemisphere_in_frame(&frame, k, twist)
}

/// Lattice expressed in an explicit frame whose third column is the normal.
/// Exactly rotation-equivariant: `R·frame` yields `R·directions`.
pub fn fibonacci_hemisphere_in_frame(frame: &Rotation3<f64>, k: usize, twist: f64) -> HemisphereQuadrature {
    let k = k.max(1);
    HemisphereQuadrature {
        directions: (0..k).map(|i| frame * lattice_local(i, k, twist)).collect(),
        delta_omega: 2.0 * PI / k as f64,
    }
}

/// Deterministic per-pixel lattice twist (golden-ratio sequence over the
/// linear pixel index).
pub fn pixel_twist(index: usize) -> f64 {
    const PHI_FRAC: f64 = 0.618_033_988_749_894_9;
    2.0 * PI * (index as f64 * PHI_FRAC).fract()
}

/// Pixel-aligned grid of quadratures.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<HemisphereQuadrature>,
}

impl QuadratureGrid {
    /// Linear indices of `(u, v)` and its existing 8-neighbors, self first.
    pub fn neighborhood(width: usize, height: usize, u: usize, v: usize) -> Vec<usize> {
        let mut out = vec![v * width + u];
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let x = u as isize + dx;
                let y = v as isize + dy;
                if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                    out.push(y as usize * width + x as usize);
                }
            }
        }
        out
    }
}

/// Union of the pixel's directions with those of its existing 8-neighbors;
/// the solid angle is spread uniformly over the merged set.
pub fn neighbor_shared_rays(grid: &QuadratureGrid, u: usize, v: usize) -> HemisphereQuadrature {
    let directions: Vec<Vec3> = QuadratureGrid::neighborhood(grid.width, grid.height, u, v)
        .into_iter()
        .flat_map(|i| grid.cells[i].directions.iter().copied())
        .collect();
    let delta_omega = 2.0 * PI / directions.len() as f64;
    HemisphereQuadrature {
        directions,
        delta_omega,
    }
}

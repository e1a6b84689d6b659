//! Supervision losses. Squared errors are means over pixels and channels.
//!
//! Each buffer loss has a `_grad` twin returning the value together with the
//! gradient with respect to the prediction.

use crate::camera::Camera;
use crate::composite::MarchConfig;
use crate::error::{Error, Result};
use crate::image::{Image, NormalImage, RgbImage, ScalarImage};
use crate::math::{Rgb, Vec3};
use crate::objective::Observation;
use crate::shading::{render_panorama, render_perspective_from_volume, shade_lambertian, ShadingOptions};
use crate::surface::SurfaceBuffers;
use crate::volume::VsgVolume;

/// Per-pixel flag marking where the albedo ground truth is locally constant.
pub type MaskImage = Image<bool>;

/// Lower clamp applied to α inside the logarithm of [`loss_reg_alpha`].
pub const REG_ALPHA_FLOOR: f64 = 1e-7;

fn check_same<T, U>(a: &Image<T>, b: &Image<U>, what: &str) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "{what}: prediction is {:?} but target is {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn mse_rgb(pred: &[Rgb], gt: &[Rgb]) -> f64 {
    mse_rgb_grad(pred, gt).0
}

pub fn mse_rgb_grad(pred: &[Rgb], gt: &[Rgb]) -> (f64, Vec<Rgb>) {
    let n = 3.0 * pred.len().max(1) as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let e = p - g;
            sum += e.norm_squared();
            e * (2.0 / n)
        })
        .collect();
    (sum / n, grad)
}

pub fn mse_scalar_grad(pred: &[f64], gt: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len().max(1) as f64;
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let e = p - g;
            sum += e * e;
            2.0 * e / n
        })
        .collect();
    (sum / n, grad)
}

/// MSE plus `λ_local` times the L1 norm of the forward differences of `pred`
/// between pairs of masked pixels, normalized by `3·W·H`.
pub fn loss_albedo(pred: &RgbImage, gt: &RgbImage, mask: Option<&MaskImage>, lambda_local: f64) -> Result<f64> {
    Ok(loss_albedo_grad(pred, gt, mask, lambda_local)?.0)
}

pub fn loss_albedo_grad(
    pred: &RgbImage,
    gt: &RgbImage,
    mask: Option<&MaskImage>,
    lambda_local: f64,
) -> Result<(f64, Vec<Rgb>)> {
    check_same(pred, gt, "albedo")?;
    let (mut value, mut grad) = mse_rgb_grad(pred.pixels(), gt.pixels());
    let Some(mask) = mask else {
        return Ok((value, grad));
    };
    check_same(pred, mask, "albedo mask")?;
    let (w, h) = pred.dims();
    let norm = lambda_local / (3.0 * (w * h) as f64);
    let mut l1 = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x, y) {
                continue;
            }
            let i = y * w + x;
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx >= w || ny >= h || !*mask.get(nx, ny) {
                    continue;
                }
                let j = ny * w + nx;
                let d = pred.pixels()[j] - pred.pixels()[i];
                l1 += d.abs().sum();
                let s = d.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }) * norm;
                grad[j] += s;
                grad[i] -= s;
            }
        }
    }
    value += norm * l1;
    Ok((value, grad))
}

/// Mean angle between `pred` and unit `gt`.
pub fn loss_normal(pred: &NormalImage, gt: &NormalImage) -> Result<f64> {
    Ok(loss_normal_grad(pred, gt)?.0)
}

pub fn loss_normal_grad(pred: &NormalImage, gt: &NormalImage) -> Result<(f64, Vec<Vec3>)> {
    check_same(pred, gt, "normal")?;
    let n = pred.len().max(1) as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (i, (p, g)) in pred.pixels().iter().zip(gt.pixels()).enumerate() {
        let len = p.norm();
        if len == 0.0 {
            return Err(Error::Invalid(format!("predicted normal at pixel {i} has zero length")));
        }
        let c = g.dot(p) / len;
        let cc = c.clamp(-1.0, 1.0);
        sum += cc.acos();
        let s2 = 1.0 - c * c;
        if s2 <= 1e-24 || c != cc {
            grad.push(Vec3::zeros());
        } else {
            let dc = (g - p * (c / len)) / len;
            grad.push(dc * (-1.0 / (s2.sqrt() * n)));
        }
    }
    Ok((sum / n, grad))
}

/// Closed-form scale `argmin_c Σ (gt - c·pred)²`.
pub fn scale_invariant_factor(pred: &[f64], gt: &[f64]) -> f64 {
    let pg: f64 = pred.iter().zip(gt).map(|(p, g)| p * g).sum();
    let pp: f64 = pred.iter().map(|p| p * p).sum();
    pg / pp
}

/// `mean (gt - c·pred)²` for a given scale.
pub fn scale_invariant_term(pred: &[f64], gt: &[f64], c: f64) -> f64 {
    pred.iter().zip(gt).map(|(p, g)| (g - c * p).powi(2)).sum::<f64>() / pred.len().max(1) as f64
}

/// Log-depth L2 plus `λ_si` times the scale-invariant term.
pub fn loss_depth(pred: &ScalarImage, gt: &ScalarImage, lambda_si: f64) -> Result<f64> {
    Ok(loss_depth_grad(pred, gt, lambda_si)?.0)
}

/// Gradient treats the scale as fixed, which is exact because the scale
/// minimizes the term.
pub fn loss_depth_grad(pred: &ScalarImage, gt: &ScalarImage, lambda_si: f64) -> Result<(f64, Vec<f64>)> {
    check_same(pred, gt, "depth")?;
    let (p, g) = (pred.pixels(), gt.pixels());
    if let Some(i) = p.iter().chain(g).position(|&d| !(d > 0.0)) {
        return Err(Error::Invalid(format!("depth entry {i} is not positive")));
    }
    let n = p.len().max(1) as f64;
    let c = scale_invariant_factor(p, g);
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &gi) in p.iter().zip(g) {
        let e = (gi + 1.0).ln() - (pi + 1.0).ln();
        let r = gi - c * pi;
        value += e * e + lambda_si * r * r;
        grad.push((-2.0 * e / (pi + 1.0) - 2.0 * lambda_si * c * r) / n);
    }
    Ok((value / n, grad))
}

/// Mean of `-α ln α` over voxels; exactly 0 at α = 0 and α = 1.
pub fn loss_reg_alpha(volume: &VsgVolume) -> f64 {
    loss_reg_alpha_grad(volume).0
}

/// Value and `∂/∂α` per voxel.
pub fn loss_reg_alpha_grad(volume: &VsgVolume) -> (f64, Vec<f64>) {
    let n = volume.len() as f64;
    let mut sum = 0.0;
    let grad = volume
        .records()
        .iter()
        .map(|r| {
            let a = r[0].min(1.0);
            let la = a.max(REG_ALPHA_FLOOR).ln();
            sum -= a * la;
            if a > REG_ALPHA_FLOOR {
                -(la + 1.0) / n
            } else {
                -la / n
            }
        })
        .collect();
    (sum / n, grad)
}

/// Mean over panorama observations of the MSE against clipped renders.
/// Non-panorama observations are ignored.
pub fn loss_light_photometric(volume: &VsgVolume, observations: &[Observation], march: &MarchConfig) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for o in observations {
        if let Observation::Panorama {
            center,
            orientation,
            image,
        } = o
        {
            let r = render_panorama(center, orientation, volume, image.dims(), true, march);
            total += mse_rgb(r.pixels.pixels(), image.pixels());
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Color MSE plus depth MSE against a perspective render of the volume.
pub fn loss_visible(
    volume: &VsgVolume,
    image: &RgbImage,
    depth: &ScalarImage,
    camera: &Camera,
    march: &MarchConfig,
) -> Result<f64> {
    let (rgb, d) = render_perspective_from_volume(camera, volume, march);
    check_same(&rgb.pixels, image, "visible color")?;
    check_same(&d, depth, "visible depth")?;
    Ok(mse_rgb(rgb.pixels.pixels(), image.pixels()) + mse_scalar_grad(d.pixels(), depth.pixels()).0)
}

/// MSE between `image` and the Lambertian re-render.
pub fn loss_rerender(
    surf: &SurfaceBuffers,
    camera: &Camera,
    volume: &VsgVolume,
    image: &RgbImage,
    opts: &ShadingOptions,
) -> Result<f64> {
    let r = shade_lambertian(surf, camera, volume, opts)?;
    check_same(&r.ldr.pixels, image, "rerender")?;
    Ok(mse_rgb(r.ldr.pixels.pixels(), image.pixels()))
}

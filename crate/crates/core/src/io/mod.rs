//! File formats and scene configuration.

mod config;
mod pfm;
mod png;
mod vsg1;

pub use config::{
    load_observations, ObservationSpec, OptimizerConfig, SceneConfig, VolumeConfig,
};
pub use pfm::{load_pfm, read_pfm, save_pfm, write_pfm, PfmImage};
pub use png::{decode_gamma, encode_gamma, load_png, save_png, GAMMA};
pub use vsg1::{load_vsg1, read_vsg1, save_vsg1, write_vsg1, VSG1_MAGIC};

use std::path::Path;

use crate::image::{NormalImage, RgbImage, ScalarImage};
use crate::surface::SurfaceBuffers;
use crate::error::Result;

/// Loads an RGB image from PNG (linearized) or PFM by extension.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    match extension(path).as_str() {
        "png" => load_png(path),
        _ => load_pfm(path)?.into_rgb(),
    }
}

pub fn load_scalar(path: &Path) -> Result<ScalarImage> {
    load_pfm(path)?.into_scalar()
}

/// Saves as PNG (gamma-encoded, values clamped to [0,1]) or PFM by extension.
pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    match extension(path).as_str() {
        "png" => save_png(path, img),
        _ => save_pfm(path, &PfmImage::Rgb(img.clone())),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Surface buffers stored as `albedo.pfm`, `normal.pfm` and `depth.pfm` in a directory.
pub fn load_surface(dir: &Path) -> Result<SurfaceBuffers> {
    let albedo = load_rgb(&dir.join("albedo.pfm"))?;
    let normal: NormalImage = load_rgb(&dir.join("normal.pfm"))?;
    let depth = load_scalar(&dir.join("depth.pfm"))?;
    SurfaceBuffers::new(albedo, normal, depth)
}

pub fn save_surface(dir: &Path, surf: &SurfaceBuffers) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_pfm(&dir.join("albedo.pfm"), &PfmImage::Rgb(surf.albedo.clone()))?;
    save_pfm(&dir.join("normal.pfm"), &PfmImage::Rgb(surf.normal.clone()))?;
    save_pfm(&dir.join("depth.pfm"), &PfmImage::Gray(surf.depth.clone()))
}

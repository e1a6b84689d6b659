//! 8-bit PNG with a plain 2.2 power-law transfer curve.

use std::path::Path;

use crate::error::Result;
use crate::image::RgbImage;
use crate::math::Rgb;

pub const GAMMA: f64 = 2.2;

/// 8-bit code to linear value.
pub fn decode_gamma(v: u8) -> f64 {
    (v as f64 / 255.0).powf(GAMMA)
}

/// Linear value to 8-bit code, clamping to [0,1].
pub fn encode_gamma(x: f64) -> u8 {
    (x.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let img = ::image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_fn(w as usize, h as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32);
        Rgb::new(decode_gamma(p[0]), decode_gamma(p[1]), decode_gamma(p[2]))
    }))
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    let out = ::image::RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.get(x as usize, y as usize);
        ::image::Rgb([encode_gamma(p.x), encode_gamma(p.y), encode_gamma(p.z)])
    });
    out.save_with_format(path, ::image::ImageFormat::Png)?;
    Ok(())
}

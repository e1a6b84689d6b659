//! Portable float maps. Rows are stored bottom to top; a negative scale
//! marks little-endian data. Written files are always little endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{RgbImage, ScalarImage};
use crate::math::Rgb;

#[derive(Clone, Debug, PartialEq)]
pub enum PfmImage {
    Rgb(RgbImage),
    Gray(ScalarImage),
}

impl PfmImage {
    pub fn into_rgb(self) -> Result<RgbImage> {
        match self {
            PfmImage::Rgb(i) => Ok(i),
            PfmImage::Gray(g) => Ok(g.map(|v| Rgb::repeat(*v))),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarImage> {
        match self {
            PfmImage::Gray(g) => Ok(g),
            PfmImage::Rgb(_) => Err(Error::Invalid("expected a single-channel PFM".into())),
        }
    }
}

pub fn write_pfm<W: Write>(mut w: W, img: &PfmImage) -> Result<()> {
    let (tag, width, height) = match img {
        PfmImage::Rgb(i) => ("PF", i.width(), i.height()),
        PfmImage::Gray(i) => ("Pf", i.width(), i.height()),
    };
    write!(w, "{tag}\n{width} {height}\n-1.0\n")?;
    let mut buf = Vec::new();
    for y in (0..height).rev() {
        for x in 0..width {
            match img {
                PfmImage::Rgb(i) => {
                    for c in i.get(x, y).iter() {
                        buf.extend_from_slice(&(*c as f32).to_le_bytes());
                    }
                }
                PfmImage::Gray(i) => buf.extend_from_slice(&(*i.get(x, y) as f32).to_le_bytes()),
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one whitespace-delimited header token starting at `*pos`.
fn token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(start, "unexpected end of PFM header"));
    }
    String::from_utf8(bytes[start..*pos].to_vec()).map_err(|_| Error::parse(start, "PFM header is not ASCII"))
}

pub fn read_pfm<R: Read>(mut r: R) -> Result<PfmImage> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let tag = token(&bytes, &mut pos)?;
    let channels = match tag.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(Error::parse(0, format!("bad PFM magic `{tag}`"))),
    };
    let at = pos;
    let width: usize = token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::parse(at, "bad PFM width"))?;
    let at = pos;
    let height: usize = token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::parse(at, "bad PFM height"))?;
    let at = pos;
    let scale: f64 = token(&bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::parse(at, "bad PFM scale"))?;
    if width == 0 || height == 0 {
        return Err(Error::parse(at, "PFM dimensions must be positive"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(at, "PFM scale must be nonzero"));
    }
    // exactly one whitespace byte ends the header
    pos += 1;
    let little = scale < 0.0;
    let need = width * height * channels * 4;
    if bytes.len() < pos + need {
        return Err(Error::parse(
            bytes.len(),
            format!("PFM data truncated: need {need} bytes after the header"),
        ));
    }
    let data = &bytes[pos..pos + need];
    let f = |i: usize| {
        let b: [u8; 4] = data[4 * i..4 * i + 4].try_into().expect("4 bytes");
        (if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
    };
    let row = |y: usize| height - 1 - y;
    Ok(if channels == 3 {
        PfmImage::Rgb(RgbImage::from_fn(width, height, |x, y| {
            let i = (row(y) * width + x) * 3;
            Rgb::new(f(i), f(i + 1), f(i + 2))
        }))
    } else {
        PfmImage::Gray(ScalarImage::from_fn(width, height, |x, y| f(row(y) * width + x)))
    })
}

pub fn save_pfm(path: &Path, img: &PfmImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pfm(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<PfmImage> {
    read_pfm(BufReader::new(File::open(path)?))
}

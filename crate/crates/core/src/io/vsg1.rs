//! `VSG1` volume files: magic, `u32` dims, `f32` min corner and extent, then
//! 8 `f32` per voxel `(α, c, μ, σ)` with x fastest, all little endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::volume::{decode_sigma, encode_sigma, Aabb, VsgVolume, CHANNELS, CH_SIGMA, SIGMA_FLOOR};

pub const VSG1_MAGIC: &[u8; 4] = b"VSG1";
const HEADER: usize = 4 + 3 * 4 + 6 * 4;

pub fn write_vsg1<W: Write>(mut w: W, vol: &VsgVolume) -> Result<()> {
    w.write_all(VSG1_MAGIC)?;
    for d in vol.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let b = vol.bounds();
    for x in b.min.iter().chain(b.extent.iter()) {
        w.write_all(&(*x as f32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(vol.len() * CHANNELS * 4);
    for r in vol.records() {
        for (c, &x) in r.iter().enumerate() {
            let x = if c == CH_SIGMA { decode_sigma(x) } else { x };
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_vsg1<R: Read>(mut r: R) -> Result<VsgVolume> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != VSG1_MAGIC {
        return Err(Error::parse(0, "missing VSG1 magic"));
    }
    if bytes.len() < HEADER {
        return Err(Error::parse(bytes.len(), "truncated VSG1 header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        *d = u32_at(4 + 4 * a) as usize;
        if *d == 0 {
            return Err(Error::parse(4 + 4 * a, "volume dimension is zero"));
        }
    }
    let min = Vec3::new(f32_at(16) as f64, f32_at(20) as f64, f32_at(24) as f64);
    let extent = Vec3::new(f32_at(28) as f64, f32_at(32) as f64, f32_at(36) as f64);
    if (0..3).any(|a| !(extent[a] > 0.0) || !min[a].is_finite()) {
        return Err(Error::parse(16, "bounds must be finite with positive extent"));
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::parse(4, "volume dimensions overflow"))?;
    let need = n
        .checked_mul(CHANNELS * 4)
        .and_then(|b| b.checked_add(HEADER))
        .ok_or_else(|| Error::parse(4, "volume dimensions overflow"))?;
    if bytes.len() != need {
        return Err(Error::parse(
            bytes.len().min(need),
            format!("expected {need} bytes for {dims:?} voxels, file has {}", bytes.len()),
        ));
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let base = HEADER + i * CHANNELS * 4;
        let mut rec = [0.0; CHANNELS];
        for (c, v) in rec.iter_mut().enumerate() {
            *v = f32_at(base + 4 * c) as f64;
        }
        if rec.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(base, format!("voxel {i} has a non-finite channel")));
        }
        if !(rec[CH_SIGMA] > SIGMA_FLOOR) {
            return Err(Error::parse(
                base + 4 * CH_SIGMA,
                format!("voxel {i} sigma {} must exceed {SIGMA_FLOOR}", rec[CH_SIGMA]),
            ));
        }
        rec[CH_SIGMA] = encode_sigma(rec[CH_SIGMA]);
        records.push(rec);
    }
    let vol = VsgVolume::from_records(dims, Aabb::new(min, extent), records)?;
    vol.validate()?;
    Ok(vol)
}

pub fn save_vsg1(path: &Path, vol: &VsgVolume) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vsg1(&mut w, vol)?;
    w.flush()?;
    Ok(())
}

pub fn load_vsg1(path: &Path) -> Result<VsgVolume> {
    read_vsg1(BufReader::new(File::open(path)?))
}

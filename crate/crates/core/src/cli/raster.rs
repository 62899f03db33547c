//! Single-file raster format and 16-bit PGM export.
//!
//! Layout (little-endian): 12-byte magic `SLDF-RASTER\0`, u32 version,
//! u32 width, u32 height, f64 pixel pitch (um), then `width * height` f32
//! samples in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagecore::{Grid, Image};

pub const MAGIC: &[u8; 12] = b"SLDF-RASTER\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16 + 4 + 4 + 8;

pub fn encode(img: &Image) -> Vec<u8> {
    let g = img.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(g.width as u32).to_le_bytes());
    out.extend_from_slice(&(g.height as u32).to_le_bytes());
    out.extend_from_slice(&g.pixel_pitch.to_le_bytes());
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < HEADER_LEN || &bytes[..12] != MAGIC {
        return Err(Error::Format("not a raster file (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(12);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported raster version {version}")));
    }
    let width = u32_at(16) as usize;
    let height = u32_at(20) as usize;
    let pitch = f64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
    let grid = Grid::new(width, height, pitch)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * grid.len() {
        return Err(Error::Format(format!(
            "raster payload is {} bytes, expected {}",
            payload.len(),
            4 * grid.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Image::from_vec(grid, data)
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode(img))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes a min-max scaled binary 16-bit PGM; returns the (min, max) mapped to (0, 65535).
pub fn write_pgm(path: &Path, img: &Image) -> Result<(f64, f64)> {
    let (lo, hi) = (img.min(), img.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n65535\n", img.width(), img.height())?;
    let mut buf = Vec::with_capacity(2 * img.data().len());
    for &v in img.data() {
        let q = (((v - lo) / span) * 65535.0).round().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    f.write_all(&buf)?;
    Ok((lo, hi))
}

//! Binary containers for volumes, heatmaps and band volumes, plus PGM export.
//!
//! All containers are little-endian: a 4-byte magic, a `u32` version (1),
//! `u32` dimensions, then an `f32` payload in row-major order.
//!
//! | magic  | header after version                                   | payload        |
//! |--------|--------------------------------------------------------|----------------|
//! | `LVOL` | `Θ, X, Y: u32`, `r_x, r_y, r_θ, origin_x, origin_y: f64` | `[Θ][X][Y]`    |
//! | `HMAP` | `X, Y: u32`                                            | `[X][Y]`       |
//! | `BVOL` | `N, M_x, M_y: u32`                                     | `[N][M_x][M_y]`|

use std::fs;
use std::io::{self, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::sensor_model::{BandVolume, Heatmap};
use crate::state_grid::{GridSpec, LikelihoodVolume};

pub const LVOL_MAGIC: &[u8; 4] = b"LVOL";
pub const HMAP_MAGIC: &[u8; 4] = b"HMAP";
pub const BVOL_MAGIC: &[u8; 4] = b"BVOL";
pub const FORMAT_VERSION: u32 = 1;

/// Largest payload accepted, in elements.
const MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("format mismatch: expected magic {expected:?}, found {found:?}")]
    FormatMismatch { expected: String, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("dimension overflow: {0:?}")]
    DimensionOverflow(Vec<u32>),
    #[error("{found} trailing bytes after payload")]
    TrailingBytes { found: u64 },
    #[error("invalid contents: {0}")]
    InvalidContents(String),
}

fn check_magic(cur: &mut Cursor<&[u8]>, expected: &[u8; 4]) -> Result<(), FormatError> {
    let mut magic = [0u8; 4];
    if cur.read_exact(&mut magic).is_err() {
        return Err(FormatError::TruncatedPayload {
            expected: 4,
            found: cur.get_ref().len() as u64,
        });
    }
    if &magic != expected {
        return Err(FormatError::FormatMismatch {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    Ok(())
}

fn header_u32(cur: &mut Cursor<&[u8]>, header_len: u64) -> Result<u32, FormatError> {
    cur.read_u32::<LittleEndian>().map_err(|_| FormatError::TruncatedPayload {
        expected: header_len,
        found: cur.get_ref().len() as u64,
    })
}

fn header_f64(cur: &mut Cursor<&[u8]>, header_len: u64) -> Result<f64, FormatError> {
    cur.read_f64::<LittleEndian>().map_err(|_| FormatError::TruncatedPayload {
        expected: header_len,
        found: cur.get_ref().len() as u64,
    })
}

fn element_count(dims: &[u32]) -> Result<usize, FormatError> {
    let mut n: u64 = 1;
    for &d in dims {
        n = n
            .checked_mul(d as u64)
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| FormatError::DimensionOverflow(dims.to_vec()))?;
    }
    Ok(n as usize)
}

fn read_payload(cur: &mut Cursor<&[u8]>, count: usize) -> Result<Vec<f64>, FormatError> {
    let start = cur.position();
    let total = cur.get_ref().len() as u64;
    let need = start + 4 * count as u64;
    if total < need {
        return Err(FormatError::TruncatedPayload {
            expected: need,
            found: total,
        });
    }
    if total > need {
        return Err(FormatError::TrailingBytes { found: total - need });
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(cur.read_f32::<LittleEndian>()? as f64);
    }
    Ok(out)
}

fn write_payload<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for &v in values {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

fn check_version(cur: &mut Cursor<&[u8]>, header_len: u64) -> Result<(), FormatError> {
    let v = header_u32(cur, header_len)?;
    if v != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(v));
    }
    Ok(())
}

fn dim_u32(n: usize) -> io::Result<u32> {
    u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension exceeds u32"))
}

pub fn write_volume<W: Write>(w: &mut W, vol: &LikelihoodVolume) -> io::Result<()> {
    let s = vol.spec();
    w.write_all(LVOL_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    for d in [s.theta_bins, s.x_bins, s.y_bins] {
        w.write_u32::<LittleEndian>(dim_u32(d)?)?;
    }
    for f in [s.res_x, s.res_y, s.res_theta, s.origin_x, s.origin_y] {
        w.write_f64::<LittleEndian>(f)?;
    }
    write_payload(w, vol.values())
}

pub fn read_volume(bytes: &[u8]) -> Result<LikelihoodVolume, FormatError> {
    const HEADER: u64 = 4 + 4 + 12 + 40;
    let mut cur = Cursor::new(bytes);
    check_magic(&mut cur, LVOL_MAGIC)?;
    check_version(&mut cur, HEADER)?;
    let dims = [
        header_u32(&mut cur, HEADER)?,
        header_u32(&mut cur, HEADER)?,
        header_u32(&mut cur, HEADER)?,
    ];
    let mut f = [0.0; 5];
    for v in &mut f {
        *v = header_f64(&mut cur, HEADER)?;
    }
    let count = element_count(&dims)?;
    let spec = GridSpec {
        theta_bins: dims[0] as usize,
        x_bins: dims[1] as usize,
        y_bins: dims[2] as usize,
        res_x: f[0],
        res_y: f[1],
        res_theta: f[2],
        origin_x: f[3],
        origin_y: f[4],
    };
    spec.validate()
        .map_err(|e| FormatError::InvalidContents(e.to_string()))?;
    let values = read_payload(&mut cur, count)?;
    LikelihoodVolume::from_values(spec, values).map_err(|e| FormatError::InvalidContents(e.to_string()))
}

pub fn save_volume(path: &Path, vol: &LikelihoodVolume) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(64 + 4 * vol.values().len());
    write_volume(&mut buf, vol)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<LikelihoodVolume, FormatError> {
    read_volume(&fs::read(path)?)
}

/// Writes a bare 2D matrix as a single-heading-bin LVOL with unit cells.
pub fn write_matrix_lvol<W: Write>(w: &mut W, rows: usize, cols: usize, data: &[f64]) -> io::Result<()> {
    assert_eq!(rows * cols, data.len());
    w.write_all(LVOL_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    for d in [1, rows, cols] {
        w.write_u32::<LittleEndian>(dim_u32(d)?)?;
    }
    for f in [1.0, 1.0, std::f64::consts::TAU, 0.0, 0.0] {
        w.write_f64::<LittleEndian>(f)?;
    }
    write_payload(w, data)
}

pub fn write_heatmap<W: Write>(w: &mut W, h: &Heatmap) -> io::Result<()> {
    w.write_all(HMAP_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(dim_u32(h.width())?)?;
    w.write_u32::<LittleEndian>(dim_u32(h.height())?)?;
    write_payload(w, h.values())
}

pub fn read_heatmap(bytes: &[u8]) -> Result<Heatmap, FormatError> {
    const HEADER: u64 = 16;
    let mut cur = Cursor::new(bytes);
    check_magic(&mut cur, HMAP_MAGIC)?;
    check_version(&mut cur, HEADER)?;
    let dims = [header_u32(&mut cur, HEADER)?, header_u32(&mut cur, HEADER)?];
    let count = element_count(&dims)?;
    let values = read_payload(&mut cur, count)?;
    Heatmap::from_values(dims[0] as usize, dims[1] as usize, values)
        .map_err(|e| FormatError::InvalidContents(e.to_string()))
}

pub fn save_heatmap(path: &Path, h: &Heatmap) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(16 + 4 * h.values().len());
    write_heatmap(&mut buf, h)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_heatmap(path: &Path) -> Result<Heatmap, FormatError> {
    read_heatmap(&fs::read(path)?)
}

pub fn write_band_volume<W: Write>(w: &mut W, bv: &BandVolume) -> io::Result<()> {
    w.write_all(BVOL_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    for d in [bv.n_bands(), bv.width(), bv.height()] {
        w.write_u32::<LittleEndian>(dim_u32(d)?)?;
    }
    write_payload(w, bv.values())
}

pub fn read_band_volume(bytes: &[u8]) -> Result<BandVolume, FormatError> {
    const HEADER: u64 = 20;
    let mut cur = Cursor::new(bytes);
    check_magic(&mut cur, BVOL_MAGIC)?;
    check_version(&mut cur, HEADER)?;
    let dims = [
        header_u32(&mut cur, HEADER)?,
        header_u32(&mut cur, HEADER)?,
        header_u32(&mut cur, HEADER)?,
    ];
    let count = element_count(&dims)?;
    let values = read_payload(&mut cur, count)?;
    BandVolume::from_values(dims[0] as usize, dims[1] as usize, dims[2] as usize, values)
        .map_err(|e| FormatError::InvalidContents(e.to_string()))
}

pub fn save_band_volume(path: &Path, bv: &BandVolume) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_band_volume(&mut buf, bv)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_band_volume(path: &Path) -> Result<BandVolume, FormatError> {
    read_band_volume(&fs::read(path)?)
}

/// Binary 8-bit PGM of a row-major matrix, scaled so the maximum maps to 255.
pub fn write_pgm<W: Write>(w: &mut W, rows: usize, cols: usize, data: &[f64]) -> io::Result<()> {
    assert_eq!(rows * cols, data.len());
    let peak = data.iter().copied().fold(0.0, f64::max);
    write!(w, "P5\n{cols} {rows}\n255\n")?;
    let pixels: Vec<u8> = data
        .iter()
        .map(|&v| {
            if peak > 0.0 {
                (v.max(0.0) / peak * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    w.write_all(&pixels)
}

pub fn save_pgm(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_pgm(&mut buf, rows, cols, data)?;
    fs::write(path, buf)?;
    Ok(())
}

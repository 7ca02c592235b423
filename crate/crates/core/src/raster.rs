//! The on-disk raster container.
//!
//! A raster is two files: the raw payload at `path` (one row-major binary
//! plane per depth, little-endian) and a UTF-8 JSON sidecar header at
//! `path + ".json"`. The header schema is frozen as version
//! `tomosar-raster/1`; the `invalid` key is optional and omitted when every
//! pixel is valid.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::GeoGrid;
use crate::image::{Complex32, Dtype, Raster, Sample};

pub const RASTER_VERSION: &str = "tomosar-raster/1";

#[derive(Debug, Serialize, Deserialize)]
struct RasterHeader {
    version: String,
    nx: usize,
    ny: usize,
    spacing: f64,
    origin: [f64; 2],
    depths: Vec<f64>,
    dtype: String,
    endianness: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    invalid: Option<Vec<Vec<u32>>>,
}

pub fn header_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

/// Write an image or stack. Fails on non-finite samples, listing the
/// offending flat indices (plane-major, capped at 16).
pub fn write_raster<S: Sample>(raster: &Raster<S>, path: &Path) -> Result<()> {
    let bad = raster.non_finite_indices(16);
    if !bad.is_empty() {
        return Err(CoreError::NonFinite {
            context: format!("write_raster({})", path.display()),
            indices: bad,
        });
    }
    let grid = raster.grid();
    let invalid = raster.invalid_indices();
    let header = RasterHeader {
        version: RASTER_VERSION.to_string(),
        nx: grid.nx,
        ny: grid.ny,
        spacing: grid.spacing,
        origin: [grid.origin.0, grid.origin.1],
        depths: grid.depths.clone(),
        dtype: S::DTYPE.name().to_string(),
        endianness: "little".to_string(),
        invalid: if invalid.iter().all(|v| v.is_empty()) {
            None
        } else {
            Some(invalid)
        },
    };

    let mut payload =
        Vec::with_capacity(raster.plane_count() * grid.pixel_count() * S::DTYPE.sample_bytes());
    for k in 0..raster.plane_count() {
        for s in raster.plane(k) {
            s.write_le(&mut payload);
        }
    }
    let mut f = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(&payload).map_err(|e| CoreError::io(path, e))?;

    let hp = header_path(path);
    let json = serde_json::to_string_pretty(&header)
        .map_err(|e| CoreError::header(&hp, e.to_string()))?;
    fs::write(&hp, json).map_err(|e| CoreError::io(&hp, e))?;
    Ok(())
}

/// A raster read back from disk; the payload dtype picks the variant.
#[derive(Debug)]
pub enum RasterData {
    Real(Raster<f32>),
    Complex(Raster<Complex32>),
}

fn read_header(path: &Path) -> Result<RasterHeader> {
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| CoreError::io(&hp, e))?;
    let header: RasterHeader =
        serde_json::from_str(&text).map_err(|e| CoreError::header(&hp, e.to_string()))?;
    if header.version != RASTER_VERSION {
        return Err(CoreError::header(
            &hp,
            format!("bad version {:?}, expected {RASTER_VERSION:?}", header.version),
        ));
    }
    if header.endianness != "little" {
        return Err(CoreError::header(
            &hp,
            format!("unsupported endianness {:?}", header.endianness),
        ));
    }
    Ok(header)
}

fn decode_planes<S: Sample>(header: &RasterHeader, payload: &[u8], path: &Path) -> Result<Raster<S>> {
    let n = header.nx * header.ny;
    let sample_bytes = S::DTYPE.sample_bytes();
    let plane_bytes = n * sample_bytes;
    let expected = plane_bytes * header.depths.len();
    if payload.len() != expected {
        return Err(CoreError::header(
            path,
            format!(
                "payload is {} bytes but header implies {} ({} planes of {} samples)",
                payload.len(),
                expected,
                header.depths.len(),
                n
            ),
        ));
    }
    let grid = GeoGrid::new(
        (header.origin[0], header.origin[1]),
        header.spacing,
        header.nx,
        header.ny,
        header.depths.clone(),
    )?;
    let mut planes = Vec::with_capacity(header.depths.len());
    for k in 0..header.depths.len() {
        let base = k * plane_bytes;
        let mut plane = Vec::with_capacity(n);
        for i in 0..n {
            let off = base + i * sample_bytes;
            plane.push(S::read_le(&payload[off..off + sample_bytes]));
        }
        planes.push(plane);
    }
    let mut raster = Raster::from_planes(grid, planes)?;
    if let Some(inv) = &header.invalid {
        raster.set_invalid_indices(inv)?;
    }
    Ok(raster)
}

/// Inverse of [`write_raster`].
pub fn read_raster(path: &Path) -> Result<RasterData> {
    let header = read_header(path)?;
    let payload = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    match Dtype::parse(&header.dtype) {
        Some(Dtype::F32) => Ok(RasterData::Real(decode_planes(&header, &payload, path)?)),
        Some(Dtype::C64Interleaved) => {
            Ok(RasterData::Complex(decode_planes(&header, &payload, path)?))
        }
        None => Err(CoreError::header(
            path,
            format!("unknown dtype {:?}", header.dtype),
        )),
    }
}

pub fn read_real(path: &Path) -> Result<Raster<f32>> {
    match read_raster(path)? {
        RasterData::Real(r) => Ok(r),
        RasterData::Complex(_) => Err(CoreError::header(
            path,
            "expected f32 raster, found c64-interleaved".to_string(),
        )),
    }
}

pub fn read_complex(path: &Path) -> Result<Raster<Complex32>> {
    match read_raster(path)? {
        RasterData::Complex(r) => Ok(r),
        RasterData::Real(_) => Err(CoreError::header(
            path,
            "expected c64-interleaved raster, found f32".to_string(),
        )),
    }
}

/// 8-bit PGM dump of a single plane, linearly mapped from [lo, hi].
/// Row 0 is rendered at the bottom so north stays up.
pub fn write_pgm(values: &[f32], nx: usize, ny: usize, lo: f32, hi: f32, path: &Path) -> Result<()> {
    if values.len() != nx * ny {
        return Err(CoreError::Mismatch(format!(
            "{} values for {nx}x{ny} image",
            values.len()
        )));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut buf = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let v = ((values[iy * nx + ix] - lo) / span).clamp(0.0, 1.0);
            buf.push((v * 255.0).round() as u8);
        }
    }
    fs::write(path, buf).map_err(|e| CoreError::io(path, e))
}

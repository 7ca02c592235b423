//! In-memory raster containers: real/complex images and tomographic stacks.

use num_complex::Complex;

use crate::error::{CoreError, Result};
use crate::grid::GeoGrid;

pub type Complex32 = Complex<f32>;

/// On-disk payload types. `c64-interleaved` is a complex sample stored as an
/// interleaved (re, im) pair of little-endian f32 values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    C64Interleaved,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::C64Interleaved => "c64-interleaved",
        }
    }

    pub fn parse(s: &str) -> Option<Dtype> {
        match s {
            "f32" => Some(Dtype::F32),
            "c64-interleaved" => Some(Dtype::C64Interleaved),
            _ => None,
        }
    }

    pub fn sample_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::C64Interleaved => 8,
        }
    }
}

/// Scalar sample types storable in the raster container.
pub trait Sample: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    const DTYPE: Dtype;
    fn zero() -> Self;
    fn finite(&self) -> bool;
    fn write_le(&self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Sample for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn zero() -> Self {
        0.0
    }

    fn finite(&self) -> bool {
        self.is_finite()
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Sample for Complex32 {
    const DTYPE: Dtype = Dtype::C64Interleaved;

    fn zero() -> Self {
        Complex::new(0.0, 0.0)
    }

    fn finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.re.to_le_bytes());
        out.extend_from_slice(&self.im.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        Complex::new(
            f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            f32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
        )
    }
}

/// A georeferenced raster: one row-major plane of samples per grid depth.
///
/// Pixels that no pulse illuminated are flagged invalid rather than silently
/// zeroed; downstream statistics skip them.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<S: Sample> {
    grid: GeoGrid,
    planes: Vec<Vec<S>>,
    /// One mask per plane, `true` = invalid. `None` means all pixels valid.
    invalid: Option<Vec<Vec<bool>>>,
}

/// Single-layer real image (f32 samples).
pub type RealImage = Raster<f32>;
/// Single-layer complex image.
pub type ComplexImage = Raster<Complex32>;
/// Stack of complex layers, one per grid depth.
pub type TomographicStack = Raster<Complex32>;
/// Stack of real layers (e.g. magnitudes of a tomographic stack).
pub type RealStack = Raster<f32>;

impl<S: Sample> Raster<S> {
    pub fn filled(grid: GeoGrid, value: S) -> Self {
        let n = grid.pixel_count();
        let planes = grid.depths.iter().map(|_| vec![value; n]).collect();
        Raster {
            grid,
            planes,
            invalid: None,
        }
    }

    pub fn zeros(grid: GeoGrid) -> Self {
        Raster::filled(grid, S::zero())
    }

    pub fn from_planes(grid: GeoGrid, planes: Vec<Vec<S>>) -> Result<Self> {
        if planes.len() != grid.depths.len() {
            return Err(CoreError::Mismatch(format!(
                "{} planes for {} depths",
                planes.len(),
                grid.depths.len()
            )));
        }
        let n = grid.pixel_count();
        for (k, p) in planes.iter().enumerate() {
            if p.len() != n {
                return Err(CoreError::Mismatch(format!(
                    "plane {k} has {} samples, expected {n}",
                    p.len()
                )));
            }
        }
        Ok(Raster {
            grid,
            planes,
            invalid: None,
        })
    }

    pub fn grid(&self) -> &GeoGrid {
        &self.grid
    }

    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, k: usize) -> &[S] {
        &self.planes[k]
    }

    pub fn plane_mut(&mut self, k: usize) -> &mut [S] {
        &mut self.planes[k]
    }

    /// The sole plane of a single-layer image.
    pub fn single(&self) -> Result<&[S]> {
        if self.planes.len() != 1 {
            return Err(CoreError::Mismatch(format!(
                "expected single-layer image, found {} layers",
                self.planes.len()
            )));
        }
        Ok(&self.planes[0])
    }

    #[inline]
    pub fn sample(&self, k: usize, ix: usize, iy: usize) -> S {
        self.planes[k][self.grid.index(ix, iy)]
    }

    #[inline]
    pub fn is_valid(&self, k: usize, idx: usize) -> bool {
        match &self.invalid {
            None => true,
            Some(masks) => !masks[k][idx],
        }
    }

    pub fn mark_invalid(&mut self, k: usize, idx: usize) {
        let masks = self.invalid.get_or_insert_with(|| {
            self.planes
                .iter()
                .map(|p| vec![false; p.len()])
                .collect()
        });
        masks[k][idx] = true;
    }

    pub fn invalid_count(&self) -> usize {
        match &self.invalid {
            None => 0,
            Some(masks) => masks.iter().map(|m| m.iter().filter(|&&b| b).count()).sum(),
        }
    }

    /// Sorted invalid-pixel indices per plane (empty when all valid).
    pub fn invalid_indices(&self) -> Vec<Vec<u32>> {
        match &self.invalid {
            None => self.planes.iter().map(|_| Vec::new()).collect(),
            Some(masks) => masks
                .iter()
                .map(|m| {
                    m.iter()
                        .enumerate()
                        .filter_map(|(i, &b)| b.then_some(i as u32))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn set_invalid_indices(&mut self, per_plane: &[Vec<u32>]) -> Result<()> {
        if per_plane.len() != self.planes.len() {
            return Err(CoreError::Mismatch(format!(
                "{} index lists for {} planes",
                per_plane.len(),
                self.planes.len()
            )));
        }
        if per_plane.iter().all(|v| v.is_empty()) {
            self.invalid = None;
            return Ok(());
        }
        let n = self.grid.pixel_count();
        let mut masks = vec![vec![false; n]; self.planes.len()];
        for (k, list) in per_plane.iter().enumerate() {
            for &idx in list {
                let idx = idx as usize;
                if idx >= n {
                    return Err(CoreError::Mismatch(format!(
                        "invalid-pixel index {idx} out of range for plane {k}"
                    )));
                }
                masks[k][idx] = true;
            }
        }
        self.invalid = Some(masks);
        Ok(())
    }

    /// Indices of non-finite samples as (plane, index), capped at `cap`.
    pub fn non_finite_indices(&self, cap: usize) -> Vec<usize> {
        let n = self.grid.pixel_count();
        let mut out = Vec::new();
        'outer: for (k, plane) in self.planes.iter().enumerate() {
            for (i, s) in plane.iter().enumerate() {
                if !s.finite() {
                    out.push(k * n + i);
                    if out.len() >= cap {
                        break 'outer;
                    }
                }
            }
        }
        out
    }
}

impl Raster<Complex32> {
    /// Linear magnitude of every sample; invalid flags carry over.
    pub fn magnitude(&self) -> RealStack {
        let planes = self
            .planes
            .iter()
            .map(|p| p.iter().map(|z| z.norm()).collect())
            .collect();
        Raster {
            grid: self.grid.clone(),
            planes,
            invalid: self.invalid.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2x2() -> GeoGrid {
        GeoGrid::surface((0.0, 0.0), 0.2, 2, 2).unwrap()
    }

    #[test]
    fn plane_shape_is_enforced() {
        assert!(Raster::from_planes(grid2x2(), vec![vec![0.0f32; 4]]).is_ok());
        assert!(Raster::from_planes(grid2x2(), vec![vec![0.0f32; 3]]).is_err());
        assert!(Raster::<f32>::from_planes(grid2x2(), vec![]).is_err());
    }

    #[test]
    fn invalid_mask_round_trip() {
        let mut img = RealImage::zeros(grid2x2());
        assert_eq!(img.invalid_count(), 0);
        img.mark_invalid(0, 3);
        assert!(!img.is_valid(0, 3));
        assert!(img.is_valid(0, 0));
        let idx = img.invalid_indices();
        assert_eq!(idx, vec![vec![3]]);
        let mut other = RealImage::zeros(grid2x2());
        other.set_invalid_indices(&idx).unwrap();
        assert_eq!(other.invalid_count(), 1);
    }

    #[test]
    fn magnitude_preserves_layout() {
        let g = grid2x2();
        let mut img = ComplexImage::zeros(g);
        img.plane_mut(0)[1] = Complex32::new(3.0, 4.0);
        let mag = img.magnitude();
        assert_eq!(mag.plane(0)[1], 5.0);
        assert_eq!(mag.plane(0)[0], 0.0);
    }
}

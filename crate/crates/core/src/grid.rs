//! Georeferenced raster grids in a local east-north-up frame.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Default pixel spacing in meters. 12 m tiles then span exactly 61 samples
/// and a 100 m region rasterizes to 500x500 px.
pub const DEFAULT_SPACING_M: f64 = 0.2;

/// Default tomographic depth list: eight layers at 0.3 m intervals from the
/// surface down to 2.1 m.
pub fn default_depths() -> Vec<f64> {
    (0..8).map(|k| 0.3 * k as f64).collect()
}

/// A regular XY grid with an ordered list of depths below the surface
/// (meters, positive down). Pixel (ix, iy) sits at world
/// `origin + (ix, iy) * spacing`; samples are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoGrid {
    /// World coordinates of pixel (0, 0), lower-left corner.
    pub origin: (f64, f64),
    /// Meters per pixel, identical in x and y.
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    /// Depths below the surface in meters, strictly increasing.
    pub depths: Vec<f64>,
}

impl GeoGrid {
    pub fn new(
        origin: (f64, f64),
        spacing: f64,
        nx: usize,
        ny: usize,
        depths: Vec<f64>,
    ) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(CoreError::Grid(format!("spacing must be > 0, got {spacing}")));
        }
        if nx == 0 || ny == 0 {
            return Err(CoreError::Grid(format!("nx, ny must be >= 1, got {nx}x{ny}")));
        }
        if depths.is_empty() {
            return Err(CoreError::Grid("depth list must not be empty".into()));
        }
        if depths.windows(2).any(|w| !(w[1] > w[0])) || depths.iter().any(|d| !d.is_finite()) {
            return Err(CoreError::Grid(format!(
                "depths must be finite and strictly increasing, got {depths:?}"
            )));
        }
        Ok(GeoGrid {
            origin,
            spacing,
            nx,
            ny,
            depths,
        })
    }

    /// Single-depth grid at the surface (depth 0).
    pub fn surface(origin: (f64, f64), spacing: f64, nx: usize, ny: usize) -> Result<Self> {
        GeoGrid::new(origin, spacing, nx, ny, vec![0.0])
    }

    /// Same XY layout with a different depth list.
    pub fn with_depths(&self, depths: Vec<f64>) -> Result<Self> {
        GeoGrid::new(self.origin, self.spacing, self.nx, self.ny, depths)
    }

    /// Same XY layout restricted to one of this grid's depths.
    pub fn at_depth(&self, layer: usize) -> Result<Self> {
        let d = *self
            .depths
            .get(layer)
            .ok_or_else(|| CoreError::Grid(format!("layer {layer} out of range")))?;
        // A single value is trivially increasing; reuse new() for the rest.
        GeoGrid::new(self.origin, self.spacing, self.nx, self.ny, vec![d])
    }

    pub fn pixel_count(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    /// Affine world -> fractional pixel map. No clamping.
    #[inline]
    pub fn world_to_pixel(&self, xy: (f64, f64)) -> (f64, f64) {
        (
            (xy.0 - self.origin.0) / self.spacing,
            (xy.1 - self.origin.1) / self.spacing,
        )
    }

    /// Inverse of [`world_to_pixel`](Self::world_to_pixel).
    #[inline]
    pub fn pixel_to_world(&self, px: (f64, f64)) -> (f64, f64) {
        (
            self.origin.0 + px.0 * self.spacing,
            self.origin.1 + px.1 * self.spacing,
        )
    }

    #[inline]
    pub fn x_coord(&self, ix: usize) -> f64 {
        self.origin.0 + ix as f64 * self.spacing
    }

    #[inline]
    pub fn y_coord(&self, iy: usize) -> f64 {
        self.origin.1 + iy as f64 * self.spacing
    }

    /// World extent covered by pixel centers, (width, height) in meters.
    pub fn span_m(&self) -> (f64, f64) {
        (
            (self.nx - 1) as f64 * self.spacing,
            (self.ny - 1) as f64 * self.spacing,
        )
    }

    pub fn center_xy(&self) -> (f64, f64) {
        let (w, h) = self.span_m();
        (self.origin.0 + 0.5 * w, self.origin.1 + 0.5 * h)
    }

    /// True when `xy` falls within the pixel-center bounding box.
    pub fn contains_xy(&self, xy: (f64, f64)) -> bool {
        let (px, py) = self.world_to_pixel(xy);
        px >= 0.0 && py >= 0.0 && px <= (self.nx - 1) as f64 && py <= (self.ny - 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map_examples() {
        let g = GeoGrid::surface((0.0, 0.0), 0.2, 100, 100).unwrap();
        assert_eq!(g.world_to_pixel((1.0, 2.0)), (5.0, 10.0));
        assert_eq!(g.world_to_pixel((0.0, 0.0)), (0.0, 0.0));
    }

    #[test]
    fn twelve_meter_tile_spans_61_samples() {
        // 12 m / 0.2 m + 1 = 61 pixel centers.
        assert_eq!((12.0 / DEFAULT_SPACING_M) as usize + 1, 61);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GeoGrid::surface((0.0, 0.0), 0.0, 10, 10).is_err());
        assert!(GeoGrid::surface((0.0, 0.0), 0.2, 0, 10).is_err());
        assert!(GeoGrid::new((0.0, 0.0), 0.2, 4, 4, vec![0.6, 0.3]).is_err());
        assert!(GeoGrid::new((0.0, 0.0), 0.2, 4, 4, vec![]).is_err());
    }

    #[test]
    fn default_stack_depths_are_eight_layers() {
        let g = GeoGrid::new((0.0, 0.0), 0.2, 16, 16, default_depths()).unwrap();
        assert_eq!(g.depths.len(), 8);
        assert!((g.depths[7] - 2.1).abs() < 1e-12);
        assert_eq!(g.depths[0], 0.0);
    }
}

//! Reflectivity-profile analysis and 3-D nest-volume extraction.
//!
//! Works on decibel stacks produced by [`crate::focus::magnitude_db`]:
//! transect profiles, per-layer soil statistics, below-soil thresholding into
//! a binary voxel volume, and 26-connected component analysis with footprint
//! areas.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{CoreError, Result};
use crate::grid::GeoGrid;
use crate::image::{RealImage, RealStack};

/// A straight sampling line across a layer, in world coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Transect {
    pub start_xy: (f64, f64),
    pub end_xy: (f64, f64),
    /// Sample count; defaults to one sample per pixel of line length.
    pub samples: Option<usize>,
}

/// Reflectivity samples along a transect.
#[derive(Debug, Clone)]
pub struct Profile {
    /// Arc length along the transect, meters.
    pub positions_m: Vec<f64>,
    pub xy: Vec<(f64, f64)>,
    pub values_db: Vec<f64>,
    /// Depth of the sampled layer, meters.
    pub depth_m: f64,
}

impl Profile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s_m,x,y,db\n");
        for i in 0..self.positions_m.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.positions_m[i], self.xy[i].0, self.xy[i].1, self.values_db[i]
            );
        }
        out
    }

    /// Indices of strict local maxima.
    pub fn local_maxima(&self) -> Vec<usize> {
        (1..self.values_db.len().saturating_sub(1))
            .filter(|&i| {
                self.values_db[i] > self.values_db[i - 1]
                    && self.values_db[i] >= self.values_db[i + 1]
            })
            .collect()
    }
}

/// Bilinearly sample a dB layer along a transect. Both endpoints must be
/// inside the grid.
pub fn extract_profile(layer_db: &RealImage, transect: &Transect) -> Result<Profile> {
    let grid = layer_db.grid();
    let plane = layer_db.single()?;
    if !grid.contains_xy(transect.start_xy) || !grid.contains_xy(transect.end_xy) {
        return Err(CoreError::Parameter(format!(
            "transect {:?} -> {:?} leaves the grid",
            transect.start_xy, transect.end_xy
        )));
    }
    let dx = transect.end_xy.0 - transect.start_xy.0;
    let dy = transect.end_xy.1 - transect.start_xy.1;
    let length = (dx * dx + dy * dy).sqrt();
    let n = transect
        .samples
        .unwrap_or(((length / grid.spacing).floor() as usize).max(1) + 1);
    if n < 2 {
        return Err(CoreError::Parameter("transect needs at least 2 samples".into()));
    }

    let mut positions = Vec::with_capacity(n);
    let mut xy = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        let p = (transect.start_xy.0 + dx * t, transect.start_xy.1 + dy * t);
        let (px, py) = grid.world_to_pixel(p);
        let x0 = (px.floor() as usize).min(grid.nx - 2);
        let y0 = (py.floor() as usize).min(grid.ny - 2);
        let fx = (px - x0 as f64).clamp(0.0, 1.0);
        let fy = (py - y0 as f64).clamp(0.0, 1.0);
        let v00 = plane[grid.index(x0, y0)] as f64;
        let v10 = plane[grid.index(x0 + 1, y0)] as f64;
        let v01 = plane[grid.index(x0, y0 + 1)] as f64;
        let v11 = plane[grid.index(x0 + 1, y0 + 1)] as f64;
        let v = v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy;
        positions.push(t * length);
        xy.push(p);
        values.push(v);
    }
    Ok(Profile {
        positions_m: positions,
        xy,
        values_db: values,
        depth_m: grid.depths[0],
    })
}

/// Mean soil reflectivity per layer in dB over valid, unmasked pixels.
/// `exclusion` is an optional per-pixel mask shared by all layers
/// (`true` = excluded, e.g. tree positions); at least 10% of pixels must
/// stay unmasked.
pub fn soil_mean_reflectivity(
    stack_db: &RealStack,
    exclusion: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let n = stack_db.grid().pixel_count();
    if let Some(mask) = exclusion {
        if mask.len() != n {
            return Err(CoreError::Mismatch(format!(
                "exclusion mask has {} entries for {n} pixels",
                mask.len()
            )));
        }
        let unmasked = mask.iter().filter(|&&m| !m).count();
        if (unmasked as f64) < 0.1 * n as f64 {
            return Err(CoreError::Parameter(format!(
                "only {unmasked}/{n} pixels unmasked; need at least 10%"
            )));
        }
    }
    let mut means = Vec::with_capacity(stack_db.plane_count());
    for k in 0..stack_db.plane_count() {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (i, &v) in stack_db.plane(k).iter().enumerate() {
            if !stack_db.is_valid(k, i) {
                continue;
            }
            if let Some(mask) = exclusion {
                if mask[i] {
                    continue;
                }
            }
            sum += v as f64;
            count += 1;
        }
        if count == 0 {
            return Err(CoreError::Empty(format!(
                "layer {k} has no valid unmasked pixels"
            )));
        }
        means.push(sum / count as f64);
    }
    Ok(means)
}

/// Binary voxel volume: 1 where reflectivity fell below the per-layer soil
/// mean minus the margin. Invalid pixels are always 0.
#[derive(Debug, Clone)]
pub struct BinaryVolume {
    pub grid: GeoGrid,
    /// Layer-major voxels, `voxels[k * nx * ny + iy * nx + ix]`.
    pub voxels: Vec<bool>,
    pub soil_mean_db: Vec<f64>,
    pub margin_db: f64,
}

impl BinaryVolume {
    pub fn count_set(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, k: usize) -> bool {
        self.voxels[k * self.grid.pixel_count() + self.grid.index(ix, iy)]
    }
}

/// Flag voxels strictly below `soil_mean[k] - margin_db` per layer.
pub fn threshold_volume(
    stack_db: &RealStack,
    soil_mean_db: &[f64],
    margin_db: f64,
) -> Result<BinaryVolume> {
    if margin_db < 0.0 {
        return Err(CoreError::Parameter(format!(
            "margin_db must be >= 0, got {margin_db}"
        )));
    }
    if soil_mean_db.len() != stack_db.plane_count() {
        return Err(CoreError::Mismatch(format!(
            "{} soil means for {} layers",
            soil_mean_db.len(),
            stack_db.plane_count()
        )));
    }
    let n = stack_db.grid().pixel_count();
    let mut voxels = vec![false; n * stack_db.plane_count()];
    for k in 0..stack_db.plane_count() {
        let cut = soil_mean_db[k] - margin_db;
        let plane = stack_db.plane(k);
        for i in 0..n {
            voxels[k * n + i] = stack_db.is_valid(k, i) && (plane[i] as f64) < cut;
        }
    }
    Ok(BinaryVolume {
        grid: stack_db.grid().clone(),
        voxels,
        soil_mean_db: soil_mean_db.to_vec(),
        margin_db,
    })
}

/// A 26-connected set of flagged voxels.
#[derive(Debug, Clone)]
pub struct VolumeComponent {
    pub id: usize,
    pub voxel_count: usize,
    /// Mean voxel position: (x m, y m, depth m).
    pub centroid: (f64, f64, f64),
    /// Shallowest and deepest flagged layer depth, meters.
    pub depth_extent_m: (f64, f64),
    /// Number of distinct (ix, iy) columns containing a flagged voxel.
    pub footprint_cells: usize,
    pub footprint_m2: f64,
}

/// Label 26-connected components with at least `min_voxels` voxels.
/// Single-threaded flood fill; component order follows scan order.
pub fn connected_volumes(volume: &BinaryVolume, min_voxels: usize) -> Vec<VolumeComponent> {
    let grid = &volume.grid;
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.depths.len());
    let plane = nx * ny;
    let mut seen = vec![false; volume.voxels.len()];
    let mut components = Vec::new();
    let mut stack_buf: Vec<usize> = Vec::new();

    for start in 0..volume.voxels.len() {
        if !volume.voxels[start] || seen[start] {
            continue;
        }
        stack_buf.clear();
        stack_buf.push(start);
        seen[start] = true;
        let mut members: Vec<usize> = Vec::new();
        while let Some(idx) = stack_buf.pop() {
            members.push(idx);
            let k = idx / plane;
            let rem = idx % plane;
            let iy = rem / nx;
            let ix = rem % nx;
            for dk in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dk == 0 && dy == 0 && dx == 0 {
                            continue;
                        }
                        let (x, y, z) = (ix as i64 + dx, iy as i64 + dy, k as i64 + dk);
                        if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64
                        {
                            continue;
                        }
                        let j = z as usize * plane + y as usize * nx + x as usize;
                        if volume.voxels[j] && !seen[j] {
                            seen[j] = true;
                            stack_buf.push(j);
                        }
                    }
                }
            }
        }
        if members.len() < min_voxels {
            continue;
        }

        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut cd = 0.0;
        let mut d_lo = f64::INFINITY;
        let mut d_hi = f64::NEG_INFINITY;
        let mut columns: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &idx in &members {
            let k = idx / plane;
            let rem = idx % plane;
            let iy = rem / nx;
            let ix = rem % nx;
            cx += grid.x_coord(ix);
            cy += grid.y_coord(iy);
            let d = grid.depths[k];
            cd += d;
            d_lo = d_lo.min(d);
            d_hi = d_hi.max(d);
            columns.insert((ix, iy));
        }
        let n = members.len() as f64;
        let footprint_cells = columns.len();
        components.push(VolumeComponent {
            id: components.len(),
            voxel_count: members.len(),
            centroid: (cx / n, cy / n, cd / n),
            depth_extent_m: (d_lo, d_hi),
            footprint_cells,
            footprint_m2: footprint_cells as f64 * grid.spacing * grid.spacing,
        });
    }
    components
}

/// Footprint area of a component: distinct flagged (x, y) columns times the
/// pixel cell area.
pub fn footprint_area(component: &VolumeComponent, grid: &GeoGrid) -> f64 {
    component.footprint_cells as f64 * grid.spacing * grid.spacing
}

/// Components as CSV: `id,centroid_x,centroid_y,centroid_depth,depth_min,depth_max,footprint_m2,voxels`.
pub fn components_to_csv(components: &[VolumeComponent]) -> String {
    let mut out =
        String::from("id,centroid_x,centroid_y,centroid_depth,depth_min,depth_max,footprint_m2,voxels\n");
    for c in components {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.id,
            c.centroid.0,
            c.centroid.1,
            c.centroid.2,
            c.depth_extent_m.0,
            c.depth_extent_m.1,
            c.footprint_m2,
            c.voxel_count
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Raster;

    fn db_stack(nx: usize, depths: Vec<f64>, fill: f32) -> RealStack {
        let grid = GeoGrid::new((0.0, 0.0), 0.2, nx, nx, depths).unwrap();
        Raster::filled(grid, fill)
    }

    #[test]
    fn constant_image_gives_constant_profile() {
        let img = db_stack(21, vec![0.0], -10.0);
        let profile = extract_profile(
            &img,
            &Transect {
                start_xy: (0.0, 2.0),
                end_xy: (4.0, 2.0),
                samples: None,
            },
        )
        .unwrap();
        assert_eq!(profile.positions_m.len(), 21);
        assert!(profile.values_db.iter().all(|&v| (v + 10.0).abs() < 1e-9));
    }

    #[test]
    fn three_bumps_give_three_maxima() {
        let mut img = db_stack(61, vec![0.0], -30.0);
        let grid = img.grid().clone();
        for &cx in &[3.0f64, 6.0, 9.0] {
            let (px, py) = grid.world_to_pixel((cx, 6.0));
            img.plane_mut(0)[grid.index(px as usize, py as usize)] = 0.0;
        }
        let profile = extract_profile(
            &img,
            &Transect {
                start_xy: (0.0, 6.0),
                end_xy: (12.0, 6.0),
                samples: None,
            },
        )
        .unwrap();
        assert_eq!(profile.local_maxima().len(), 3);
    }

    #[test]
    fn transect_outside_grid_errors() {
        let img = db_stack(11, vec![0.0], 0.0);
        assert!(extract_profile(
            &img,
            &Transect {
                start_xy: (-1.0, 0.0),
                end_xy: (1.0, 0.0),
                samples: None,
            },
        )
        .is_err());
    }

    #[test]
    fn soil_mean_examples() {
        let img = db_stack(10, vec![0.0], -10.0);
        assert_eq!(soil_mean_reflectivity(&img, None).unwrap(), vec![-10.0]);

        let mut half = db_stack(10, vec![0.0], -10.0);
        for i in 0..50 {
            half.plane_mut(0)[i] = -20.0;
        }
        let mean = soil_mean_reflectivity(&half, None).unwrap()[0];
        assert!((mean + 15.0).abs() < 1e-9);

        // Excluding the bright half must shift the mean to the dim half.
        let mask: Vec<bool> = (0..100).map(|i| i >= 50).collect();
        let masked = soil_mean_reflectivity(&half, Some(&mask)).unwrap()[0];
        assert!((masked + 20.0).abs() < 1e-9);

        let all = vec![true; 100];
        assert!(soil_mean_reflectivity(&half, Some(&all)).is_err());
    }

    #[test]
    fn threshold_examples() {
        let img = db_stack(10, vec![0.3, 0.6], -10.0);
        let vol = threshold_volume(&img, &[-10.0, -10.0], 0.0).unwrap();
        assert_eq!(vol.count_set(), 0); // strict inequality at the mean

        let mut dip = db_stack(10, vec![0.3, 0.6], -10.0);
        dip.plane_mut(1)[42] = -15.0;
        let vol = threshold_volume(&dip, &[-10.0, -10.0], 1.0).unwrap();
        assert_eq!(vol.count_set(), 1);
        assert!(vol.get(2, 4, 1));

        // Monotone in margin.
        let loose = threshold_volume(&dip, &[-10.0, -10.0], 0.0).unwrap();
        let tight = threshold_volume(&dip, &[-10.0, -10.0], 3.0).unwrap();
        assert!(loose.count_set() >= vol.count_set());
        assert!(vol.count_set() >= tight.count_set());

        assert!(threshold_volume(&dip, &[-10.0, -10.0], -1.0).is_err());
        assert!(threshold_volume(&dip, &[-10.0], 1.0).is_err());
    }

    #[test]
    fn invalid_pixels_never_flag() {
        let mut img = db_stack(4, vec![0.3], -30.0);
        img.mark_invalid(0, 5);
        let vol = threshold_volume(&img, &[0.0], 1.0).unwrap();
        assert!(!vol.voxels[5]);
        assert_eq!(vol.count_set(), 15);
    }

    #[test]
    fn two_separate_blobs_make_two_components() {
        let img = db_stack(61, vec![0.3, 0.6], -10.0);
        let mut vol = threshold_volume(&img, &[-10.0, -10.0], 1.0).unwrap();
        let grid = vol.grid.clone();
        let n = grid.pixel_count();
        // Blob A around (2 m, 2 m), both layers; blob B around (10 m, 10 m).
        for (cx, cy) in [(10usize, 10usize), (50, 50)] {
            for dy in 0..3 {
                for dx in 0..3 {
                    let idx = grid.index(cx + dx, cy + dy);
                    vol.voxels[idx] = true;
                    vol.voxels[n + idx] = true;
                }
            }
        }
        let comps = connected_volumes(&vol, 4);
        assert_eq!(comps.len(), 2);
        for c in &comps {
            assert_eq!(c.voxel_count, 18);
            assert_eq!(c.footprint_cells, 9);
            assert!((footprint_area(c, &grid) - 9.0 * 0.04).abs() < 1e-12);
            assert_eq!(c.depth_extent_m, (0.3, 0.6));
        }
        // Centroids near the blob centers, 30 m apart => distinct nests.
        let d = ((comps[0].centroid.0 - comps[1].centroid.0).powi(2)
            + (comps[0].centroid.1 - comps[1].centroid.1).powi(2))
        .sqrt();
        assert!(d > 5.0);
    }

    #[test]
    fn empty_volume_has_no_components() {
        let img = db_stack(8, vec![0.3], -10.0);
        let vol = threshold_volume(&img, &[-10.0], 1.0).unwrap();
        assert!(connected_volumes(&vol, 1).is_empty());
    }

    #[test]
    fn min_voxel_filter_drops_singletons() {
        let img = db_stack(8, vec![0.3], -10.0);
        let mut vol = threshold_volume(&img, &[-10.0], 1.0).unwrap();
        vol.voxels[10] = true;
        assert_eq!(connected_volumes(&vol, 2).len(), 0);
        assert_eq!(connected_volumes(&vol, 1).len(), 1);
    }

    #[test]
    fn single_column_footprint_is_one_cell() {
        let img = db_stack(8, vec![0.3, 0.6, 0.9], -10.0);
        let mut vol = threshold_volume(&img, &[-10.0; 3], 1.0).unwrap();
        let n = vol.grid.pixel_count();
        for k in 0..3 {
            vol.voxels[k * n + vol.grid.index(4, 4)] = true;
        }
        let comps = connected_volumes(&vol, 1);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].footprint_cells, 1);
        assert!((comps[0].footprint_m2 - 0.04).abs() < 1e-12);
    }

    #[test]
    fn components_partition_the_flagged_set() {
        // Random-ish pattern; union of component voxel counts must equal the
        // flagged count when min_voxels = 1.
        let mut img = db_stack(16, vec![0.3, 0.6], -10.0);
        for i in 0..img.grid().pixel_count() {
            if (i * 2654435761usize) % 7 == 0 {
                img.plane_mut(0)[i] = -20.0;
            }
            if (i * 40503usize) % 11 == 0 {
                img.plane_mut(1)[i] = -20.0;
            }
        }
        let vol = threshold_volume(&img, &[-10.0, -10.0], 1.0).unwrap();
        let comps = connected_volumes(&vol, 1);
        let total: usize = comps.iter().map(|c| c.voxel_count).sum();
        assert_eq!(total, vol.count_set());
    }
}

//! Labeled-patch dataset construction.
//!
//! Reference images mark nests as filled discs (binary for detection, the
//! nest area in m^2 for size estimation). Tomographic magnitude stacks are
//! tiled by a sliding window (12 x 12 m tiles, 4 m stride at 0.2 m spacing:
//! 61 x 61 px windows every 20 px, 484 patches per 500 x 500 region) and each
//! patch is labeled with the mean reference value over the central region of
//! its reference sub-image.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::GeoGrid;
use crate::image::{Raster, RealImage, RealStack};
use crate::raster::{read_real, write_raster};
use crate::rng::Rng;
use crate::scene::NestRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Detection,
    Size,
}

/// One tiled sub-image with its scalar label.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Row-major (y, x, channel) values, `tile_px * tile_px * channels`.
    pub data: Vec<f32>,
    pub label: f64,
    pub center_xy: (f64, f64),
    pub region: u32,
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone)]
pub struct PatchSet {
    pub mode: LabelMode,
    pub tile_px: usize,
    pub channels: usize,
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn regions(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.patches.iter().map(|p| p.region).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Tiling parameters. Defaults follow the reference layout: 12 m tiles,
/// 4 m stride, 21 px central label region.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TileParams {
    pub tile_m: f64,
    pub stride_m: f64,
    /// Odd side length (pixels) of the central region the label averages.
    pub central_px: usize,
}

impl Default for TileParams {
    fn default() -> Self {
        TileParams {
            tile_m: 12.0,
            stride_m: 4.0,
            central_px: 21,
        }
    }
}

impl TileParams {
    pub fn tile_px(&self, spacing: f64) -> usize {
        (self.tile_m / spacing).round() as usize + 1
    }

    pub fn stride_px(&self, spacing: f64) -> usize {
        (self.stride_m / spacing).round() as usize
    }

    pub fn validate(&self, spacing: f64) -> Result<()> {
        if !(self.tile_m > 0.0) || !(self.stride_m > 0.0) {
            return Err(CoreError::Parameter("tile and stride must be > 0".into()));
        }
        let tile_px = self.tile_px(spacing);
        if self.central_px == 0 || self.central_px % 2 == 0 || self.central_px > tile_px {
            return Err(CoreError::Parameter(format!(
                "central_px must be odd and within the {tile_px} px tile, got {}",
                self.central_px
            )));
        }
        Ok(())
    }
}

/// Render nests as filled discs of radius sqrt(area / pi): ones for
/// detection, the area value for size estimation. Overlaps take the max.
pub fn render_reference(nests: &[NestRecord], grid: &GeoGrid, mode: LabelMode) -> Result<RealImage> {
    render_reference_with(nests, grid, mode, 0.0)
}

/// [`render_reference`] with a minimum disc radius. Useful for detection
/// references when nests are much smaller than the label central region;
/// the paper-scale default is no minimum.
pub fn render_reference_with(
    nests: &[NestRecord],
    grid: &GeoGrid,
    mode: LabelMode,
    min_radius_m: f64,
) -> Result<RealImage> {
    let mut img = Raster::<f32>::zeros(grid.with_depths(vec![0.0])?);
    for nest in nests {
        if !grid.contains_xy(nest.center_xy) {
            return Err(CoreError::Parameter(format!(
                "nest {} at {:?} is outside the grid",
                nest.id, nest.center_xy
            )));
        }
        let radius = (nest.area_m2 / std::f64::consts::PI).sqrt().max(min_radius_m);
        let value = match mode {
            LabelMode::Detection => 1.0f32,
            LabelMode::Size => nest.area_m2 as f32,
        };
        let (pcx, pcy) = grid.world_to_pixel(nest.center_xy);
        let pr = radius / grid.spacing;
        let x_lo = ((pcx - pr).floor().max(0.0)) as usize;
        let x_hi = ((pcx + pr).ceil() as usize).min(grid.nx - 1);
        let y_lo = ((pcy - pr).floor().max(0.0)) as usize;
        let y_hi = ((pcy + pr).ceil() as usize).min(grid.ny - 1);
        let plane = img.plane_mut(0);
        for iy in y_lo..=y_hi {
            for ix in x_lo..=x_hi {
                let dx = ix as f64 - pcx;
                let dy = iy as f64 - pcy;
                if dx * dx + dy * dy <= pr * pr {
                    let idx = iy * grid.nx + ix;
                    plane[idx] = plane[idx].max(value);
                }
            }
        }
    }
    Ok(img)
}

/// Origins (in pixels) of the sliding tile window along one axis.
fn tile_offsets(npix: usize, tile_px: usize, stride_px: usize) -> Vec<usize> {
    if npix < tile_px {
        return Vec::new();
    }
    (0..=(npix - tile_px)).step_by(stride_px).collect()
}

/// Extract one tile from a magnitude stack as (y, x, channel) f32 values.
/// Invalid pixels read as zero.
pub(crate) fn extract_tile(stack: &RealStack, ox: usize, oy: usize, tile_px: usize) -> Vec<f32> {
    let grid = stack.grid();
    let channels = stack.plane_count();
    let mut data = vec![0.0f32; tile_px * tile_px * channels];
    for c in 0..channels {
        let plane = stack.plane(c);
        for ty in 0..tile_px {
            let src_row = (oy + ty) * grid.nx + ox;
            for tx in 0..tile_px {
                let idx = src_row + tx;
                let v = if stack.is_valid(c, idx) { plane[idx] } else { 0.0 };
                data[(ty * tile_px + tx) * channels + c] = v;
            }
        }
    }
    data
}

/// Slide a tile window over the stack and its reference image; the label is
/// the mean reference value over the central region of each tile.
pub fn tile_patches(
    stack: &RealStack,
    reference: &RealImage,
    params: &TileParams,
    mode: LabelMode,
    region: u32,
) -> Result<PatchSet> {
    let grid = stack.grid();
    if reference.grid().nx != grid.nx
        || reference.grid().ny != grid.ny
        || (reference.grid().spacing - grid.spacing).abs() > 1e-12
    {
        return Err(CoreError::Mismatch(
            "stack and reference image grids differ".into(),
        ));
    }
    params.validate(grid.spacing)?;
    let tile_px = params.tile_px(grid.spacing);
    let stride_px = params.stride_px(grid.spacing);
    if grid.nx < tile_px || grid.ny < tile_px {
        return Err(CoreError::Parameter(format!(
            "grid {}x{} smaller than one {tile_px} px tile",
            grid.nx, grid.ny
        )));
    }
    let xs = tile_offsets(grid.nx, tile_px, stride_px);
    let ys = tile_offsets(grid.ny, tile_px, stride_px);
    let ref_plane = reference.single()?;
    let half_tile = (tile_px - 1) / 2;
    let half_central = (params.central_px - 1) / 2;

    let make_patch = |(row, col): (usize, usize)| -> Patch {
        let oy = ys[row];
        let ox = xs[col];
        let data = extract_tile(stack, ox, oy, tile_px);
        let cx = ox + half_tile;
        let cy = oy + half_tile;
        let mut sum = 0.0f64;
        for iy in (cy - half_central)..=(cy + half_central) {
            for ix in (cx - half_central)..=(cx + half_central) {
                sum += ref_plane[iy * grid.nx + ix] as f64;
            }
        }
        let label = sum / (params.central_px * params.central_px) as f64;
        Patch {
            data,
            label,
            center_xy: grid.pixel_to_world((cx as f64, cy as f64)),
            region,
            row: row as u32,
            col: col as u32,
        }
    };

    let indices: Vec<(usize, usize)> = ys
        .iter()
        .enumerate()
        .flat_map(|(r, _)| xs.iter().enumerate().map(move |(c, _)| (r, c)))
        .collect();

    #[cfg(feature = "parallel")]
    let patches: Vec<Patch> = {
        use rayon::prelude::*;
        indices.par_iter().map(|&rc| make_patch(rc)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let patches: Vec<Patch> = indices.iter().map(|&rc| make_patch(rc)).collect();

    Ok(PatchSet {
        mode,
        tile_px,
        channels: stack.plane_count(),
        patches,
    })
}

/// Hold out one region: everything else trains, the held-out region validates.
pub fn split_regions(patchsets: &[PatchSet], validation_region: u32) -> Result<(PatchSet, PatchSet)> {
    if patchsets.is_empty() {
        return Err(CoreError::Empty("no patch sets to split".into()));
    }
    let mode = patchsets[0].mode;
    let tile_px = patchsets[0].tile_px;
    let channels = patchsets[0].channels;
    let mut regions: Vec<u32> = Vec::new();
    for set in patchsets {
        if set.mode != mode || set.tile_px != tile_px || set.channels != channels {
            return Err(CoreError::Mismatch("patch sets have mixed layouts".into()));
        }
        regions.extend(set.regions());
    }
    regions.sort_unstable();
    regions.dedup();
    if regions.len() < 2 {
        return Err(CoreError::Parameter(
            "need at least 2 regions to hold one out".into(),
        ));
    }
    if !regions.contains(&validation_region) {
        return Err(CoreError::Parameter(format!(
            "unknown validation region {validation_region} (have {regions:?})"
        )));
    }
    let mut train = PatchSet {
        mode,
        tile_px,
        channels,
        patches: Vec::new(),
    };
    let mut val = PatchSet {
        mode,
        tile_px,
        channels,
        patches: Vec::new(),
    };
    for set in patchsets {
        for p in &set.patches {
            if p.region == validation_region {
                val.patches.push(p.clone());
            } else {
                train.patches.push(p.clone());
            }
        }
    }
    Ok((train, val))
}

/// Count patches with label at or above the threshold (detection sets).
pub fn count_positive(set: &PatchSet, threshold: f64) -> Result<usize> {
    if set.mode != LabelMode::Detection {
        return Err(CoreError::Parameter(
            "count_positive expects a detection patch set".into(),
        ));
    }
    Ok(set.patches.iter().filter(|p| p.label >= threshold).count())
}

// --- Augmentation ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub flips: bool,
    /// Quarter-turn rotations only; arbitrary angles would interpolate
    /// across the 8 channels.
    pub rotations: bool,
    /// Multiplicative brightness range.
    pub brightness: (f64, f64),
    /// Augmented copies generated per input patch.
    pub copies: usize,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            flips: true,
            rotations: true,
            brightness: (0.8, 1.25),
            copies: 8,
        }
    }
}

fn transform_indices(tile_px: usize, hflip: bool, vflip: bool, quarter_turns: u64) -> Vec<usize> {
    let n = tile_px;
    let mut map: Vec<usize> = (0..n * n).collect();
    let rot = |idx: usize| -> usize {
        let (y, x) = (idx / n, idx % n);
        // 90 deg counterclockwise: (y, x) -> (x, n - 1 - y)
        x * n + (n - 1 - y)
    };
    for _ in 0..(quarter_turns % 4) {
        map = map.iter().map(|&i| rot(i)).collect();
    }
    if hflip {
        map = map
            .iter()
            .enumerate()
            .map(|(dst, _)| {
                let (y, x) = (dst / n, dst % n);
                map[y * n + (n - 1 - x)]
            })
            .collect();
    }
    if vflip {
        map = map
            .iter()
            .enumerate()
            .map(|(dst, _)| {
                let (y, x) = (dst / n, dst % n);
                map[(n - 1 - y) * n + x]
            })
            .collect();
    }
    map
}

fn apply_transform(patch: &Patch, channels: usize, map: &[usize], gain: f64) -> Patch {
    let mut data = vec![0.0f32; patch.data.len()];
    for (dst, &src) in map.iter().enumerate() {
        let d = dst * channels;
        let s = src * channels;
        for c in 0..channels {
            data[d + c] = (patch.data[s + c] as f64 * gain) as f32;
        }
    }
    Patch {
        data,
        ..patch.clone()
    }
}

/// Horizontal flip (x mirrored), label preserved.
pub fn patch_flip_h(patch: &Patch, tile_px: usize, channels: usize) -> Patch {
    apply_transform(patch, channels, &transform_indices(tile_px, true, false, 0), 1.0)
}

/// Vertical flip (y mirrored), label preserved.
pub fn patch_flip_v(patch: &Patch, tile_px: usize, channels: usize) -> Patch {
    apply_transform(patch, channels, &transform_indices(tile_px, false, true, 0), 1.0)
}

/// Rotate by `quarter_turns` x 90 degrees counterclockwise.
pub fn patch_rot90(patch: &Patch, tile_px: usize, channels: usize, quarter_turns: u64) -> Patch {
    apply_transform(patch, channels, &transform_indices(tile_px, false, false, quarter_turns), 1.0)
}

/// Multiplicative brightness change, label preserved.
pub fn patch_gain(patch: &Patch, gain: f64) -> Patch {
    let data = patch.data.iter().map(|&v| (v as f64 * gain) as f32).collect();
    Patch {
        data,
        ..patch.clone()
    }
}

/// Generate `policy.copies` label-preserving variants of a patch.
pub fn augment(patch: &Patch, tile_px: usize, channels: usize, rng: &mut Rng, policy: &AugmentPolicy) -> Vec<Patch> {
    let mut out = Vec::with_capacity(policy.copies);
    for _ in 0..policy.copies {
        let hflip = policy.flips && rng.below(2) == 1;
        let vflip = policy.flips && rng.below(2) == 1;
        let turns = if policy.rotations { rng.below(4) } else { 0 };
        let gain = rng.range(policy.brightness.0, policy.brightness.1);
        let map = transform_indices(tile_px, hflip, vflip, turns);
        out.push(apply_transform(patch, channels, &map, gain));
    }
    out
}

// --- Persistence ----------------------------------------------------------------

/// Write patch data plus a label table. The payload reuses the raster
/// container: one plane per channel, patches stacked vertically
/// (plane row `p * tile_px + y`). Labels for both modes share one CSV:
/// `region,row,col,center_x,center_y,label_detection,label_size`.
pub fn write_patch_files(detection: &PatchSet, size: &PatchSet, path: &Path) -> Result<()> {
    if detection.len() != size.len()
        || detection.tile_px != size.tile_px
        || detection.channels != size.channels
    {
        return Err(CoreError::Mismatch(
            "detection and size patch sets are not aligned".into(),
        ));
    }
    for (a, b) in detection.patches.iter().zip(&size.patches) {
        if a.center_xy != b.center_xy || a.region != b.region {
            return Err(CoreError::Mismatch(
                "detection and size patches are ordered differently".into(),
            ));
        }
    }
    let tile_px = detection.tile_px;
    let channels = detection.channels;
    let count = detection.len().max(1);
    let grid = GeoGrid::new(
        (0.0, 0.0),
        1.0,
        tile_px,
        tile_px * count,
        (0..channels).map(|c| c as f64).collect(),
    )?;
    let mut planes = vec![vec![0.0f32; tile_px * tile_px * count]; channels];
    for (p, patch) in detection.patches.iter().enumerate() {
        for y in 0..tile_px {
            for x in 0..tile_px {
                for c in 0..channels {
                    planes[c][(p * tile_px + y) * tile_px + x] =
                        patch.data[(y * tile_px + x) * channels + c];
                }
            }
        }
    }
    write_raster(&Raster::from_planes(grid, planes)?, path)?;

    let mut csv = String::from("region,row,col,center_x,center_y,label_detection,label_size\n");
    for (a, b) in detection.patches.iter().zip(&size.patches) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            a.region, a.row, a.col, a.center_xy.0, a.center_xy.1, a.label, b.label
        );
    }
    let label_path = labels_path(path);
    std::fs::write(&label_path, csv).map_err(|e| CoreError::io(&label_path, e))?;
    Ok(())
}

pub fn labels_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".labels.csv");
    path.with_file_name(name)
}

/// Read back one mode's patch set from the pair written by
/// [`write_patch_files`].
pub fn read_patch_files(path: &Path, mode: LabelMode) -> Result<PatchSet> {
    let raster = read_real(path)?;
    let grid = raster.grid();
    let tile_px = grid.nx;
    let channels = raster.plane_count();
    if grid.ny % tile_px != 0 {
        return Err(CoreError::Mismatch(format!(
            "patch payload height {} is not a multiple of tile {}",
            grid.ny, tile_px
        )));
    }
    let count = grid.ny / tile_px;

    let label_path = labels_path(path);
    let text = std::fs::read_to_string(&label_path).map_err(|e| CoreError::io(&label_path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(CoreError::Mismatch(format!(
                "labels CSV line {} has {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        rows.push((
            fields[0].parse::<u32>().map_err(bad_num)?,
            fields[1].parse::<u32>().map_err(bad_num)?,
            fields[2].parse::<u32>().map_err(bad_num)?,
            fields[3].parse::<f64>().map_err(bad_num)?,
            fields[4].parse::<f64>().map_err(bad_num)?,
            fields[5].parse::<f64>().map_err(bad_num)?,
            fields[6].parse::<f64>().map_err(bad_num)?,
        ));
    }
    if rows.len() != count {
        return Err(CoreError::Mismatch(format!(
            "{} label rows for {count} patches",
            rows.len()
        )));
    }

    let mut patches = Vec::with_capacity(count);
    for (p, row) in rows.iter().enumerate() {
        let mut data = vec![0.0f32; tile_px * tile_px * channels];
        for c in 0..channels {
            let plane = raster.plane(c);
            for y in 0..tile_px {
                for x in 0..tile_px {
                    data[(y * tile_px + x) * channels + c] = plane[(p * tile_px + y) * tile_px + x];
                }
            }
        }
        patches.push(Patch {
            data,
            label: match mode {
                LabelMode::Detection => row.5,
                LabelMode::Size => row.6,
            },
            center_xy: (row.3, row.4),
            region: row.0,
            row: row.1,
            col: row.2,
        });
    }
    Ok(PatchSet {
        mode,
        tile_px,
        channels,
        patches,
    })
}

fn bad_num<E: std::fmt::Display>(e: E) -> CoreError {
    CoreError::Mismatch(format!("bad number in labels CSV: {e}"))
}

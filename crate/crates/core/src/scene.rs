//! Synthetic forest scenes and acquisition trajectories.
//!
//! A scene is a flat list of complex-reflectivity point scatterers: tree
//! trunks as vertical columns, soil as a jittered 3-D lattice filling the
//! subsurface slab, and ant-nest chambers carved out of it. Carving removes
//! every soil scatterer inside a chamber sphere, attenuates partially
//! overlapped lattice cells by their covered volume fraction, and adds one
//! opposite-sign scatterer per chamber for the residual cavity volume, so the
//! total reflectivity deficit equals the chamber volume regardless of
//! lattice spacing.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::GeoGrid;
use crate::rng::Rng;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// P-band radar parameters (center frequency, bandwidth, antenna apertures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarParams {
    pub center_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub azimuth_aperture_deg: f64,
    pub elevation_aperture_deg: f64,
}

impl Default for RadarParams {
    fn default() -> Self {
        RadarParams {
            center_frequency_hz: 425e6,
            bandwidth_hz: 50e6,
            azimuth_aperture_deg: 55.9,
            elevation_aperture_deg: 69.3,
        }
    }
}

impl RadarParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency_hz > 0.0) || !(self.bandwidth_hz > 0.0) {
            return Err(CoreError::Parameter(
                "radar frequency and bandwidth must be positive".into(),
            ));
        }
        if self.bandwidth_hz >= self.center_frequency_hz {
            return Err(CoreError::Parameter(format!(
                "bandwidth {} must be below center frequency {}",
                self.bandwidth_hz, self.center_frequency_hz
            )));
        }
        for a in [self.azimuth_aperture_deg, self.elevation_aperture_deg] {
            if !(a > 0.0 && a < 90.0) {
                return Err(CoreError::Parameter(format!(
                    "aperture {a} deg out of (0, 90)"
                )));
            }
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_frequency_hz
    }

    /// Range resolution c / (2B) of the compressed pulse.
    pub fn range_resolution_m(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)
    }
}

/// Two-layer ground model: scatterer lattice density, reflectivity, and the
/// propagation slowdown below the air/soil interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoilModel {
    pub relative_permittivity: f64,
    /// Linear amplitude per soil lattice scatterer.
    pub mean_reflectivity: f64,
    /// Lattice spacing of the discrete soil volume, meters.
    pub lattice_spacing_m: f64,
    /// Thickness of the scattering soil slab, meters.
    pub slab_depth_m: f64,
    /// One-way attenuation inside the soil, dB per meter (0 = lossless).
    pub attenuation_db_per_m: f64,
}

impl Default for SoilModel {
    fn default() -> Self {
        SoilModel {
            relative_permittivity: 4.0,
            mean_reflectivity: 0.25,
            lattice_spacing_m: 0.25,
            slab_depth_m: 2.5,
            attenuation_db_per_m: 0.0,
        }
    }
}

impl SoilModel {
    pub fn validate(&self) -> Result<()> {
        if self.relative_permittivity < 1.0 {
            return Err(CoreError::Parameter(format!(
                "relative permittivity {} below 1",
                self.relative_permittivity
            )));
        }
        if !(self.mean_reflectivity > 0.0) {
            return Err(CoreError::Parameter("soil reflectivity must be > 0".into()));
        }
        if !(self.lattice_spacing_m > 0.0) || !(self.slab_depth_m > 0.0) {
            return Err(CoreError::Parameter(
                "soil lattice spacing and slab depth must be > 0".into(),
            ));
        }
        if self.attenuation_db_per_m < 0.0 {
            return Err(CoreError::Parameter("attenuation must be >= 0".into()));
        }
        Ok(())
    }

    pub fn slowdown(&self) -> f64 {
        self.relative_permittivity.sqrt()
    }
}

/// Trees as vertical columns of discrete point scatterers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeSpec {
    pub height_m: f64,
    /// Square planting grid pitch, meters.
    pub grid_spacing_m: f64,
    pub scatterers_per_tree: usize,
    /// Linear amplitude per trunk scatterer.
    pub amplitude: f64,
}

impl Default for TreeSpec {
    fn default() -> Self {
        TreeSpec {
            height_m: 10.0,
            grid_spacing_m: 2.5,
            scatterers_per_tree: 20,
            amplitude: 1.0,
        }
    }
}

impl TreeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.height_m > 0.0) || !(self.grid_spacing_m > 0.0) {
            return Err(CoreError::Parameter(
                "tree height and spacing must be > 0".into(),
            ));
        }
        if self.scatterers_per_tree == 0 {
            return Err(CoreError::Parameter("scatterers_per_tree must be >= 1".into()));
        }
        Ok(())
    }
}

/// An underground nest: air-filled chamber spheres scattered inside a
/// cylindrical footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestSpec {
    pub chamber_count: usize,
    pub chamber_diameter_m: f64,
    /// Chamber center depth range below the surface, meters (min, max).
    pub depth_range_m: (f64, f64),
    /// Loose-soil mound area, the ground-truth "size" in m^2.
    pub footprint_area_m2: f64,
    pub center_xy: (f64, f64),
    /// Scales the residual cavity contrast (1 = plain volume deficit).
    #[serde(default = "default_void_contrast")]
    pub void_contrast: f64,
}

fn default_void_contrast() -> f64 {
    1.0
}

impl NestSpec {
    /// 100 chambers, 22 cm diameter, 0.4-1.5 m deep, 10.24 m^2 footprint.
    pub fn preset_100(center_xy: (f64, f64)) -> Self {
        NestSpec {
            chamber_count: 100,
            chamber_diameter_m: 0.22,
            depth_range_m: (0.4, 1.5),
            footprint_area_m2: 10.24,
            center_xy,
            void_contrast: 1.0,
        }
    }

    /// 50 chambers, 20 cm diameter, 0.3-1.0 m deep, 6.25 m^2 footprint.
    pub fn preset_50(center_xy: (f64, f64)) -> Self {
        NestSpec {
            chamber_count: 50,
            chamber_diameter_m: 0.20,
            depth_range_m: (0.3, 1.0),
            footprint_area_m2: 6.25,
            center_xy,
            void_contrast: 1.0,
        }
    }

    /// 20 chambers, 18 cm diameter, 0.3-0.6 m deep, 2.25 m^2 footprint.
    pub fn preset_20(center_xy: (f64, f64)) -> Self {
        NestSpec {
            chamber_count: 20,
            chamber_diameter_m: 0.18,
            depth_range_m: (0.3, 0.6),
            footprint_area_m2: 2.25,
            center_xy,
            void_contrast: 1.0,
        }
    }

    /// 6 chambers, 16 cm diameter, 0.2-0.4 m deep, 0.64 m^2 footprint.
    pub fn preset_6(center_xy: (f64, f64)) -> Self {
        NestSpec {
            chamber_count: 6,
            chamber_diameter_m: 0.16,
            depth_range_m: (0.2, 0.4),
            footprint_area_m2: 0.64,
            center_xy,
            void_contrast: 1.0,
        }
    }

    pub fn preset(chambers: usize, center_xy: (f64, f64)) -> Result<Self> {
        match chambers {
            100 => Ok(Self::preset_100(center_xy)),
            50 => Ok(Self::preset_50(center_xy)),
            20 => Ok(Self::preset_20(center_xy)),
            6 => Ok(Self::preset_6(center_xy)),
            other => Err(CoreError::Parameter(format!(
                "no nest preset with {other} chambers (choose 6, 20, 50, 100)"
            ))),
        }
    }

    pub fn footprint_radius_m(&self) -> f64 {
        (self.footprint_area_m2 / std::f64::consts::PI).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chamber_diameter_m > 0.0) || !(self.footprint_area_m2 > 0.0) {
            return Err(CoreError::Parameter(
                "chamber diameter and footprint area must be > 0".into(),
            ));
        }
        let (lo, hi) = self.depth_range_m;
        if !(lo > 0.0 && hi >= lo) {
            return Err(CoreError::Parameter(format!(
                "bad depth range {:?}",
                self.depth_range_m
            )));
        }
        if lo - 0.5 * self.chamber_diameter_m < 0.0 {
            return Err(CoreError::Parameter(
                "shallowest chamber would breach the surface".into(),
            ));
        }
        if self.void_contrast < 0.0 {
            return Err(CoreError::Parameter("void_contrast must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScattererTag {
    Tree,
    Soil,
    /// Residual cavity scatterer carrying a chamber's reflectivity deficit.
    NestVoid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scatterer {
    /// ENU position in meters; z is up, the surface is z = 0.
    pub position: [f64; 3],
    pub amplitude: Complex64,
    pub tag: ScattererTag,
}

/// Ground truth for one carved nest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestRecord {
    pub id: usize,
    pub center_xy: (f64, f64),
    pub area_m2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
    /// Footprint of the scene (surface grid).
    pub extent: GeoGrid,
    pub nests: Vec<NestRecord>,
    /// Pitch of the soil lattice the scene was built with; carving uses it
    /// as the cell size for overlap attenuation.
    pub soil_spacing_m: f64,
}

impl Scene {
    pub fn empty(extent: GeoGrid) -> Self {
        Scene {
            scatterers: Vec::new(),
            extent,
            nests: Vec::new(),
            soil_spacing_m: SoilModel::default().lattice_spacing_m,
        }
    }

    pub fn count_tag(&self, tag: ScattererTag) -> usize {
        self.scatterers.iter().filter(|s| s.tag == tag).count()
    }

    /// Axis-aligned bounds of all scatterer positions (min, max corners).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in &self.scatterers {
            for a in 0..3 {
                lo[a] = lo[a].min(s.position[a]);
                hi[a] = hi[a].max(s.position[a]);
            }
        }
        (lo, hi)
    }

    /// Inspection summary (specs, counts, ground truth) as JSON. The full
    /// scatterer list is included only when `with_scatterers` is set.
    pub fn to_json(&self, with_scatterers: bool) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            extent: &'a GeoGrid,
            scatterer_count: usize,
            trees: usize,
            soil: usize,
            nest_voids: usize,
            nests: &'a [NestRecord],
            #[serde(skip_serializing_if = "Option::is_none")]
            scatterers: Option<&'a [Scatterer]>,
        }
        serde_json::to_string_pretty(&Summary {
            extent: &self.extent,
            scatterer_count: self.scatterers.len(),
            trees: self.count_tag(ScattererTag::Tree),
            soil: self.count_tag(ScattererTag::Soil),
            nest_voids: self.count_tag(ScattererTag::NestVoid),
            nests: &self.nests,
            scatterers: with_scatterers.then_some(self.scatterers.as_slice()),
        })
        .expect("scene serialization cannot fail")
    }

    /// Ground-truth nests as CSV: `id,x,y,area_m2`.
    pub fn truth_csv(&self) -> String {
        let mut out = String::from("id,x,y,area_m2\n");
        for n in &self.nests {
            let _ = writeln!(out, "{},{},{},{}", n.id, n.center_xy.0, n.center_xy.1, n.area_m2);
        }
        out
    }
}

/// Parse the CSV written by [`Scene::truth_csv`].
pub fn parse_truth_csv(text: &str) -> Result<Vec<NestRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CoreError::Mismatch(format!(
                "truth CSV line {} has {} fields, expected 4",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| CoreError::Mismatch(format!("bad number {s:?} in truth CSV")))
        };
        out.push(NestRecord {
            id: parse(fields[0])? as usize,
            center_xy: (parse(fields[1])?, parse(fields[2])?),
            area_m2: parse(fields[3])?,
        });
    }
    Ok(out)
}

// --- Forest construction ----------------------------------------------------

/// Build trees on a centered square grid plus a jittered 3-D soil lattice.
/// Pass `None` for `trees` to get a soil-only scene. Deterministic in `rng`.
pub fn build_forest(
    trees: Option<&TreeSpec>,
    soil: &SoilModel,
    extent: &GeoGrid,
    rng: &mut Rng,
) -> Result<Scene> {
    soil.validate()?;
    let (w, h) = extent.span_m();
    if w <= 0.0 || h <= 0.0 {
        return Err(CoreError::Empty("scene extent has zero span".into()));
    }

    let mut scene = Scene::empty(extent.clone());
    scene.soil_spacing_m = soil.lattice_spacing_m;
    let (ox, oy) = extent.origin;

    if let Some(spec) = trees {
        spec.validate()?;
        if spec.grid_spacing_m > w.max(h) {
            return Err(CoreError::Parameter(format!(
                "extent {w}x{h} m too small for tree spacing {}",
                spec.grid_spacing_m
            )));
        }
        let count_x = (w / spec.grid_spacing_m).floor() as usize + 1;
        let count_y = (h / spec.grid_spacing_m).floor() as usize + 1;
        let off_x = ox + 0.5 * (w - (count_x - 1) as f64 * spec.grid_spacing_m);
        let off_y = oy + 0.5 * (h - (count_y - 1) as f64 * spec.grid_spacing_m);
        let dz = spec.height_m / spec.scatterers_per_tree as f64;
        for j in 0..count_y {
            for i in 0..count_x {
                let x = off_x + i as f64 * spec.grid_spacing_m;
                let y = off_y + j as f64 * spec.grid_spacing_m;
                for k in 0..spec.scatterers_per_tree {
                    scene.scatterers.push(Scatterer {
                        position: [x, y, (k as f64 + 0.5) * dz],
                        amplitude: Complex64::new(spec.amplitude, 0.0),
                        tag: ScattererTag::Tree,
                    });
                }
            }
        }
    }

    // Soil: jittered lattice filling the slab z in [-slab_depth, 0).
    let a = soil.lattice_spacing_m;
    let nx = (w / a).floor() as usize + 1;
    let ny = (h / a).floor() as usize + 1;
    let nz = (soil.slab_depth_m / a).round().max(1.0) as usize;
    let half = 0.5 * a;
    for k in 0..nz {
        let z0 = -((k as f64 + 0.5) * a);
        for j in 0..ny {
            let y0 = oy + j as f64 * a;
            for i in 0..nx {
                let x0 = ox + i as f64 * a;
                let x = (x0 + rng.range(-half, half)).clamp(ox, ox + w);
                let y = (y0 + rng.range(-half, half)).clamp(oy, oy + h);
                let z = (z0 + rng.range(-half, half)).min(-1e-3);
                scene.scatterers.push(Scatterer {
                    position: [x, y, z],
                    amplitude: Complex64::new(soil.mean_reflectivity, 0.0),
                    tag: ScattererTag::Soil,
                });
            }
        }
    }
    Ok(scene)
}

// --- Nest carving -------------------------------------------------------------

const PLACEMENT_RETRIES: usize = 10_000;
/// Cube-sphere overlap is estimated on a fixed sub-grid of the lattice cell.
const OVERLAP_SUBDIV: usize = 4;

/// Carve an ant nest into the scene: place chamber spheres by rejection
/// sampling (pairwise center separation of at least one diameter), remove the
/// soil scatterers inside them, attenuate partially covered lattice cells,
/// and add the residual cavity contrast. Appends the ground-truth record.
pub fn carve_nest(mut scene: Scene, nest: &NestSpec, rng: &mut Rng) -> Result<Scene> {
    nest.validate()?;
    if nest.chamber_count == 0 {
        return Ok(scene);
    }
    let r_foot = nest.footprint_radius_m();
    let (cx, cy) = nest.center_xy;
    if !scene.extent.contains_xy((cx - r_foot, cy - r_foot))
        || !scene.extent.contains_xy((cx + r_foot, cy + r_foot))
    {
        return Err(CoreError::Parameter(format!(
            "nest footprint at ({cx}, {cy}) radius {r_foot:.2} m exceeds the scene extent"
        )));
    }

    // Chamber placement.
    let radius = 0.5 * nest.chamber_diameter_m;
    let min_sep2 = nest.chamber_diameter_m * nest.chamber_diameter_m;
    let (dlo, dhi) = nest.depth_range_m;
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(nest.chamber_count);
    let mut attempts = 0usize;
    while centers.len() < nest.chamber_count {
        if attempts >= PLACEMENT_RETRIES {
            return Err(CoreError::Placement(format!(
                "placed {}/{} chambers after {PLACEMENT_RETRIES} attempts (footprint {:.2} m^2)",
                centers.len(),
                nest.chamber_count,
                nest.footprint_area_m2
            )));
        }
        attempts += 1;
        let rr = r_foot * rng.next_f64().sqrt();
        let th = rng.range(0.0, TAU);
        let depth = rng.range(dlo, dhi);
        let c = [cx + rr * th.cos(), cy + rr * th.sin(), -depth];
        if centers.iter().all(|o| dist2(o, &c) >= min_sep2) {
            centers.push(c);
        }
    }

    // Soil removal and attenuation. The lattice cell of a scatterer is
    // approximated by a cube of the lattice pitch centered on it.
    let soil_spacing = scene.soil_spacing_m;
    let cell_volume = soil_spacing.powi(3);
    let r2 = radius * radius;
    let reach = radius + 0.87 * soil_spacing; // sphere radius + half cell diagonal
    let bbox_lo = [cx - r_foot - reach, cy - r_foot - reach, -dhi - radius - reach];
    let bbox_hi = [cx + r_foot + reach, cy + r_foot + reach, 0.0];
    let mut removed_volume = vec![0.0f64; centers.len()];
    let mut keep = Vec::with_capacity(scene.scatterers.len());
    for s in scene.scatterers.into_iter() {
        if s.tag != ScattererTag::Soil {
            keep.push(s);
            continue;
        }
        let p = s.position;
        if p[0] < bbox_lo[0]
            || p[0] > bbox_hi[0]
            || p[1] < bbox_lo[1]
            || p[1] > bbox_hi[1]
            || p[2] < bbox_lo[2]
        {
            keep.push(s);
            continue;
        }
        let near: Vec<usize> = centers
            .iter()
            .enumerate()
            .filter(|(_, c)| dist2(c, &p) <= reach * reach)
            .map(|(i, _)| i)
            .collect();
        if near.is_empty() {
            keep.push(s);
            continue;
        }
        // Fraction of this scatterer's cell inside any chamber, attributed
        // per chamber (spheres are disjoint by construction).
        let mut inside = vec![0usize; near.len()];
        let n = OVERLAP_SUBDIV;
        for kz in 0..n {
            for ky in 0..n {
                for kx in 0..n {
                    let q = [
                        p[0] + ((kx as f64 + 0.5) / n as f64 - 0.5) * soil_spacing,
                        p[1] + ((ky as f64 + 0.5) / n as f64 - 0.5) * soil_spacing,
                        p[2] + ((kz as f64 + 0.5) / n as f64 - 0.5) * soil_spacing,
                    ];
                    for (slot, &ci) in near.iter().enumerate() {
                        if dist2(&centers[ci], &q) < r2 {
                            inside[slot] += 1;
                            break;
                        }
                    }
                }
            }
        }
        let total: usize = inside.iter().sum();
        let frac = total as f64 / (n * n * n) as f64;
        for (slot, &ci) in near.iter().enumerate() {
            removed_volume[ci] += inside[slot] as f64 / (n * n * n) as f64 * cell_volume;
        }
        let strictly_inside = near.iter().any(|&ci| dist2(&centers[ci], &p) < r2);
        if strictly_inside || frac >= 1.0 {
            continue; // removed entirely
        }
        if frac > 0.0 {
            let mut s = s;
            s.amplitude *= 1.0 - frac;
            keep.push(s);
        } else {
            keep.push(s);
        }
    }

    // Residual cavity contrast: whatever chamber volume the lattice did not
    // account for becomes one negative scatterer at the chamber center. A
    // chamber fully sampled by the lattice keeps a zero-amplitude marker so
    // the carved geometry stays inspectable.
    let density = soil_density(&keep, cell_volume);
    let sphere_volume = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
    for (ci, c) in centers.iter().enumerate() {
        let residual = (sphere_volume - removed_volume[ci]).max(0.0);
        let amp = -density * residual * nest.void_contrast;
        keep.push(Scatterer {
            position: *c,
            amplitude: Complex64::new(amp, 0.0),
            tag: ScattererTag::NestVoid,
        });
    }

    scene.scatterers = keep;
    let id = scene.nests.len();
    scene.nests.push(NestRecord {
        id,
        center_xy: nest.center_xy,
        area_m2: nest.footprint_area_m2,
    });
    Ok(scene)
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn soil_density(scatterers: &[Scatterer], cell_volume: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in scatterers {
        if s.tag == ScattererTag::Soil {
            sum += s.amplitude.norm();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64) / cell_volume
    }
}

// --- Trajectories -------------------------------------------------------------

/// One radar pulse transmission point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    /// Azimuth of the flight direction, radians.
    pub heading_rad: f64,
    /// Unit antenna boresight direction.
    pub boresight: [f64; 3],
}

impl Pose {
    /// Orthonormal antenna frame (boresight, along-track, cross-track).
    pub fn frame(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let b = self.boresight;
        let h = [self.heading_rad.cos(), self.heading_rad.sin(), 0.0];
        let hb = h[0] * b[0] + h[1] * b[1] + h[2] * b[2];
        let mut u = [h[0] - hb * b[0], h[1] - hb * b[1], h[2] - hb * b[2]];
        let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        if norm < 1e-9 {
            // Boresight parallel to heading; fall back to any perpendicular.
            u = if b[2].abs() < 0.9 {
                normalize([-b[1], b[0], 0.0])
            } else {
                [1.0, 0.0, 0.0]
            };
        } else {
            u = [u[0] / norm, u[1] / norm, u[2] / norm];
        }
        let v = [
            b[1] * u[2] - b[2] * u[1],
            b[2] * u[0] - b[0] * u[2],
            b[0] * u[1] - b[1] * u[0],
        ];
        (b, u, v)
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub arc_step_m: f64,
}

impl Trajectory {
    pub fn validate_above_surface(&self) -> Result<()> {
        if self.poses.iter().any(|p| p.position[2] <= 0.0) {
            return Err(CoreError::Parameter(
                "trajectory descends to or below the surface".into(),
            ));
        }
        Ok(())
    }

    /// Maximum spacing between consecutive poses.
    pub fn max_pose_spacing(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| {
                let a = w[0].position;
                let b = w[1].position;
                dist2(&a, &b).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Conical helix: radius and altitude interpolate linearly in turn angle,
/// the antenna looks at the ground point under the helix axis. Consecutive
/// poses are spaced at most `arc_step` apart.
pub fn helical_trajectory(
    center_xy: (f64, f64),
    radius: (f64, f64),
    altitude: (f64, f64),
    turns: f64,
    arc_step: f64,
) -> Result<Trajectory> {
    let (r0, r1) = radius;
    let (z0, z1) = altitude;
    if !(r0 > 0.0 && r1 > 0.0) {
        return Err(CoreError::Parameter(format!("degenerate radii ({r0}, {r1})")));
    }
    if !(z0 > 0.0 && z1 > 0.0) {
        return Err(CoreError::Parameter("altitudes must be above the surface".into()));
    }
    if !(arc_step > 0.0) {
        return Err(CoreError::Parameter("arc_step must be > 0".into()));
    }
    if !(turns >= 1.0) {
        return Err(CoreError::Parameter(format!("turns must be >= 1, got {turns}")));
    }

    let total = TAU * turns;
    // |dP/dtheta|^2 = r^2 + (dr/dtheta)^2 + (dz/dtheta)^2 with linear r, z.
    let dr = (r1 - r0) / total;
    let dz = (z1 - z0) / total;
    let speed_max = (r0.max(r1).powi(2) + dr * dr + dz * dz).sqrt();
    let steps = (total * speed_max / arc_step).ceil() as usize;
    let dtheta = total / steps as f64;

    let mut poses = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let theta = i as f64 * dtheta;
        let t = theta / total;
        let r = r0 + (r1 - r0) * t;
        let z = z0 + (z1 - z0) * t;
        let pos = [
            center_xy.0 + r * theta.cos(),
            center_xy.1 + r * theta.sin(),
            z,
        ];
        let boresight = normalize([center_xy.0 - pos[0], center_xy.1 - pos[1], -z]);
        poses.push(Pose {
            position: pos,
            heading_rad: (theta + 0.5 * std::f64::consts::PI).rem_euclid(TAU),
            boresight,
        });
    }
    Ok(Trajectory {
        poses,
        arc_step_m: arc_step,
    })
}

/// Straight nadir-looking pass with evenly spaced poses, endpoints included.
pub fn linear_trajectory(start: [f64; 3], end: [f64; 3], step: f64) -> Result<Trajectory> {
    if !(step > 0.0) {
        return Err(CoreError::Parameter("step must be > 0".into()));
    }
    let length = dist2(&start, &end).sqrt();
    if length == 0.0 {
        return Err(CoreError::Parameter("zero-length segment".into()));
    }
    let n = (length / step).ceil().max(1.0) as usize;
    let heading = (end[1] - start[1]).atan2(end[0] - start[0]);
    let mut poses = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = i as f64 / n as f64;
        poses.push(Pose {
            position: [
                start[0] + (end[0] - start[0]) * t,
                start[1] + (end[1] - start[1]) * t,
                start[2] + (end[2] - start[2]) * t,
            ],
            heading_rad: heading.rem_euclid(TAU),
            boresight: [0.0, 0.0, -1.0],
        });
    }
    Ok(Trajectory {
        poses,
        arc_step_m: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extent(side_m: f64) -> GeoGrid {
        let n = (side_m / 0.2) as usize + 1;
        GeoGrid::surface((0.0, 0.0), 0.2, n, n).unwrap()
    }

    fn small_soil() -> SoilModel {
        SoilModel {
            lattice_spacing_m: 0.5,
            slab_depth_m: 1.5,
            ..SoilModel::default()
        }
    }

    #[test]
    fn nine_tree_grid() {
        // 6 m extent at 2.5 m pitch leaves room for exactly a 3x3 grid.
        let spec = TreeSpec::default();
        let mut rng = Rng::new(1);
        let scene = build_forest(Some(&spec), &small_soil(), &extent(6.0), &mut rng).unwrap();
        assert_eq!(
            scene.count_tag(ScattererTag::Tree),
            9 * spec.scatterers_per_tree
        );
    }

    #[test]
    fn soil_only_scene() {
        let mut rng = Rng::new(2);
        let scene = build_forest(None, &small_soil(), &extent(4.0), &mut rng).unwrap();
        assert!(scene.count_tag(ScattererTag::Tree) == 0);
        assert!(scene.count_tag(ScattererTag::Soil) > 0);
        assert!(scene.scatterers.iter().all(|s| s.tag == ScattererTag::Soil));
    }

    #[test]
    fn forest_is_deterministic_in_seed() {
        let build = || {
            let mut rng = Rng::new(77);
            build_forest(Some(&TreeSpec::default()), &small_soil(), &extent(6.0), &mut rng)
                .unwrap()
        };
        let a = build();
        let b = build();
        assert_eq!(a.scatterers.len(), b.scatterers.len());
        for (x, y) in a.scatterers.iter().zip(&b.scatterers) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.amplitude, y.amplitude);
        }
    }

    #[test]
    fn scatterers_stay_inside_extent() {
        let mut rng = Rng::new(5);
        let ext = extent(5.0);
        let scene = build_forest(Some(&TreeSpec::default()), &small_soil(), &ext, &mut rng).unwrap();
        let (w, h) = ext.span_m();
        for s in &scene.scatterers {
            assert!(s.position[0] >= 0.0 && s.position[0] <= w);
            assert!(s.position[1] >= 0.0 && s.position[1] <= h);
        }
    }

    #[test]
    fn six_chamber_preset_geometry() {
        let soil = SoilModel {
            lattice_spacing_m: 0.15,
            slab_depth_m: 1.0,
            ..SoilModel::default()
        };
        let mut rng = Rng::new(3);
        let scene = build_forest(None, &soil, &extent(8.0), &mut rng).unwrap();
        let nest = NestSpec::preset_6((4.0, 4.0));
        let carved = carve_nest(scene, &nest, &mut rng).unwrap();
        let voids: Vec<&Scatterer> = carved
            .scatterers
            .iter()
            .filter(|s| s.tag == ScattererTag::NestVoid)
            .collect();
        assert_eq!(voids.len(), 6);
        for v in &voids {
            let depth = -v.position[2];
            assert!((0.2..=0.4).contains(&depth), "depth {depth}");
            assert!(v.amplitude.re <= 0.0);
        }
        assert_eq!(carved.nests.len(), 1);
        assert!((carved.nests[0].area_m2 - 0.64).abs() < 1e-12);
    }

    #[test]
    fn zero_chambers_is_identity() {
        let mut rng = Rng::new(4);
        let scene = build_forest(None, &small_soil(), &extent(6.0), &mut rng).unwrap();
        let before = scene.scatterers.len();
        let nest = NestSpec {
            chamber_count: 0,
            ..NestSpec::preset_6((3.0, 3.0))
        };
        let carved = carve_nest(scene, &nest, &mut rng).unwrap();
        assert_eq!(carved.scatterers.len(), before);
        assert!(carved.nests.is_empty());
    }

    #[test]
    fn hundred_chamber_centers_fit_in_footprint() {
        let soil = SoilModel {
            lattice_spacing_m: 0.3,
            slab_depth_m: 2.0,
            ..SoilModel::default()
        };
        let mut rng = Rng::new(6);
        let scene = build_forest(None, &soil, &extent(12.0), &mut rng).unwrap();
        let nest = NestSpec::preset_100((6.0, 6.0));
        let r_max = nest.footprint_radius_m();
        let carved = carve_nest(scene, &nest, &mut rng).unwrap();
        for s in carved.scatterers.iter().filter(|s| s.tag == ScattererTag::NestVoid) {
            let dx = s.position[0] - 6.0;
            let dy = s.position[1] - 6.0;
            assert!((dx * dx + dy * dy).sqrt() <= r_max + 1e-9);
        }
    }

    #[test]
    fn no_soil_scatterer_inside_any_chamber() {
        let soil = SoilModel {
            lattice_spacing_m: 0.12,
            slab_depth_m: 1.2,
            ..SoilModel::default()
        };
        let mut rng = Rng::new(8);
        let scene = build_forest(None, &soil, &extent(8.0), &mut rng).unwrap();
        let nest = NestSpec::preset_20((4.0, 4.0));
        let carved = carve_nest(scene, &nest, &mut rng).unwrap();
        let centers: Vec<[f64; 3]> = carved
            .scatterers
            .iter()
            .filter(|s| s.tag == ScattererTag::NestVoid)
            .map(|s| s.position)
            .collect();
        assert_eq!(centers.len(), 20);
        let r2 = (0.5 * nest.chamber_diameter_m).powi(2);
        for s in carved.scatterers.iter().filter(|s| s.tag == ScattererTag::Soil) {
            for c in &centers {
                assert!(
                    dist2(&s.position, c) >= r2 - 1e-12,
                    "soil scatterer {:?} inside chamber {:?}",
                    s.position,
                    c
                );
            }
        }
    }

    #[test]
    fn impossible_placement_errors_out() {
        let mut rng = Rng::new(9);
        let scene = build_forest(None, &small_soil(), &extent(8.0), &mut rng).unwrap();
        // 200 chambers of 0.3 m in a 0.64 m^2 footprint cannot be separated.
        let nest = NestSpec {
            chamber_count: 200,
            chamber_diameter_m: 0.3,
            depth_range_m: (0.2, 0.4),
            footprint_area_m2: 0.64,
            center_xy: (4.0, 4.0),
            void_contrast: 1.0,
        };
        match carve_nest(scene, &nest, &mut rng) {
            Err(CoreError::Placement(_)) => {}
            other => panic!("expected placement error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_helix_is_a_circle() {
        let t = helical_trajectory((0.0, 0.0), (25.0, 25.0), (30.0, 30.0), 1.0, 0.09).unwrap();
        // ~ 2 pi 25 / 0.09 = 1745 steps per turn.
        assert!((t.poses.len() as i64 - 1746).abs() <= 3, "{}", t.poses.len());
        for p in &t.poses {
            let r = (p.position[0].powi(2) + p.position[1].powi(2)).sqrt();
            assert!((r - 25.0).abs() < 1e-9);
            assert!((p.position[2] - 30.0).abs() < 1e-12);
        }
        assert!(t.max_pose_spacing() <= 0.09 + 1e-9);
    }

    #[test]
    fn field_preset_endpoints() {
        let t = helical_trajectory((0.0, 0.0), (115.0, 165.0), (120.0, 80.0), 2.0, 0.5).unwrap();
        let first = &t.poses[0];
        let last = t.poses.last().unwrap();
        let r_first = (first.position[0].powi(2) + first.position[1].powi(2)).sqrt();
        let r_last = (last.position[0].powi(2) + last.position[1].powi(2)).sqrt();
        assert!((r_first - 115.0).abs() < 0.5);
        assert!((first.position[2] - 120.0).abs() < 0.5);
        assert!((r_last - 165.0).abs() < 0.5);
        assert!((last.position[2] - 80.0).abs() < 0.5);
        assert!(t.max_pose_spacing() <= 0.5 + 1e-9);
    }

    #[test]
    fn helix_rejects_bad_parameters() {
        assert!(helical_trajectory((0.0, 0.0), (0.0, 25.0), (30.0, 30.0), 1.0, 0.1).is_err());
        assert!(helical_trajectory((0.0, 0.0), (25.0, 25.0), (30.0, 30.0), 0.5, 0.1).is_err());
        assert!(helical_trajectory((0.0, 0.0), (25.0, 25.0), (30.0, 30.0), 1.0, 0.0).is_err());
    }

    #[test]
    fn linear_trajectory_examples() {
        let t = linear_trajectory([0.0, 0.0, 100.0], [100.0, 0.0, 100.0], 1.0).unwrap();
        assert_eq!(t.poses.len(), 101);
        assert!(linear_trajectory([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 1.0).is_err());
        let two = linear_trajectory([0.0, 0.0, 50.0], [10.0, 0.0, 50.0], 100.0).unwrap();
        assert_eq!(two.poses.len(), 2);
        assert_eq!(two.poses[0].position, [0.0, 0.0, 50.0]);
        assert_eq!(two.poses[1].position, [10.0, 0.0, 50.0]);
    }

    #[test]
    fn truth_csv_round_trip() {
        let mut scene = Scene::empty(extent(4.0));
        scene.nests.push(NestRecord {
            id: 0,
            center_xy: (1.5, 2.5),
            area_m2: 6.25,
        });
        let csv = scene.truth_csv();
        let parsed = parse_truth_csv(&csv).unwrap();
        assert_eq!(parsed, scene.nests);
    }

    #[test]
    fn preset_rows_match_expected_values() {
        let p = NestSpec::preset_100((0.0, 0.0));
        assert_eq!(
            (p.chamber_count, p.chamber_diameter_m, p.depth_range_m, p.footprint_area_m2),
            (100, 0.22, (0.4, 1.5), 10.24)
        );
        let p = NestSpec::preset_50((0.0, 0.0));
        assert_eq!(
            (p.chamber_count, p.chamber_diameter_m, p.depth_range_m, p.footprint_area_m2),
            (50, 0.20, (0.3, 1.0), 6.25)
        );
        let p = NestSpec::preset_20((0.0, 0.0));
        assert_eq!(
            (p.chamber_count, p.chamber_diameter_m, p.depth_range_m, p.footprint_area_m2),
            (20, 0.18, (0.3, 0.6), 2.25)
        );
        let p = NestSpec::preset_6((0.0, 0.0));
        assert_eq!(
            (p.chamber_count, p.chamber_diameter_m, p.depth_range_m, p.footprint_area_m2),
            (6, 0.16, (0.2, 0.4), 0.64)
        );
    }
}

//! Range-compressed echo synthesis from point scatterers.
//!
//! Each pulse receives the coherent sum over scatterers of
//! `amp * G^2 * (1/R^2) * sinc(pi (R - r_bin) / rho_r) * exp(-j 4 pi R / lambda)`,
//! where `R` is the equivalent two-way path through the air/soil interface
//! (straight ray, vertical slowdown of sqrt(eps_r) below the surface, no
//! refraction bending) and `rho_r = c / (2 B)` is the compressed-pulse width.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::GeoGrid;
use crate::image::{Complex32, Raster};
use crate::lut::{GainTable, PolyphaseSinc, SinCosTable};
use crate::raster::{read_complex, write_raster};
use crate::rng::Rng;
use crate::scene::{Pose, RadarParams, Scene, SoilModel, Trajectory};

/// Uniform range-bin layout shared by every pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeBins {
    pub r0_m: f64,
    pub dr_m: f64,
    pub count: usize,
}

impl RangeBins {
    pub fn validate(&self, radar: &RadarParams) -> Result<()> {
        if !(self.r0_m >= 0.0) || !(self.dr_m > 0.0) || self.count < 2 {
            return Err(CoreError::Parameter(format!("bad range bins {self:?}")));
        }
        let max_dr = radar.range_resolution_m() / 2.0;
        if self.dr_m > max_dr + 1e-12 {
            return Err(CoreError::Parameter(format!(
                "range bin spacing {} m undersamples the {} m compressed pulse (max {} m)",
                self.dr_m,
                radar.range_resolution_m(),
                max_dr
            )));
        }
        Ok(())
    }

    pub fn last_range_m(&self) -> f64 {
        self.r0_m + self.dr_m * (self.count - 1) as f64
    }

    /// Bin layout covering every scene/trajectory range, padded by the
    /// truncated-sinc support so no contribution is clipped.
    pub fn covering(
        scene: &Scene,
        trajectory: &Trajectory,
        radar: &RadarParams,
        soil: &SoilModel,
        oversample: f64,
        support_lobes: f64,
    ) -> Result<RangeBins> {
        if scene.scatterers.is_empty() || trajectory.poses.is_empty() {
            return Err(CoreError::Empty("covering() needs a scene and poses".into()));
        }
        let (lo, hi) = range_span(scene, trajectory, soil);
        let rho = radar.range_resolution_m();
        let dr = rho / oversample.max(2.0);
        let margin = (support_lobes.max(1.0) + 1.0) * rho;
        let r0 = (lo - margin).max(0.0);
        let count = ((hi + margin - r0) / dr).ceil() as usize + 1;
        Ok(RangeBins {
            r0_m: r0,
            dr_m: dr,
            count,
        })
    }
}

/// Conservative bounds on the equivalent range between any pose and any
/// scatterer, from the scene bounding box. The slowdown stretches only the
/// subsurface segment, whose worst case pairs the farthest corner with the
/// deepest scatterer.
fn range_span(scene: &Scene, trajectory: &Trajectory, soil: &SoilModel) -> (f64, f64) {
    let (blo, bhi) = scene.bounds();
    let slow = soil.slowdown();
    let depth_max = (-blo[2]).max(0.0);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for pose in &trajectory.poses {
        let p = pose.position;
        let mut near = 0.0;
        let mut far = 0.0;
        for a in 0..3 {
            let d_lo = blo[a] - p[a];
            let d_hi = bhi[a] - p[a];
            let n = if d_lo <= 0.0 && d_hi >= 0.0 {
                0.0
            } else {
                d_lo.abs().min(d_hi.abs())
            };
            let f = d_lo.abs().max(d_hi.abs());
            near += n * n;
            far += f * f;
        }
        lo = lo.min(near.sqrt());
        let pz = p[2].max(1e-6);
        let far_eq = far.sqrt() * (pz + slow * depth_max) / (pz + depth_max);
        hi = hi.max(far_eq);
    }
    (lo, hi)
}

/// Equivalent two-way path length (one-way geometric distance with the
/// subsurface segment stretched by sqrt(eps_r)); scatterers above the
/// surface see plain free-space propagation.
pub fn two_way_path(pose: &Pose, point: [f64; 3], soil: &SoilModel) -> Result<f64> {
    if pose.position[2] <= 0.0 {
        return Err(CoreError::Parameter(format!(
            "pose altitude {} is at or below the surface",
            pose.position[2]
        )));
    }
    Ok(equivalent_range(pose.position, point, soil.slowdown()))
}

#[inline]
pub(crate) fn equivalent_range(pose: [f64; 3], point: [f64; 3], slowdown: f64) -> f64 {
    let dx = point[0] - pose[0];
    let dy = point[1] - pose[1];
    let dz = point[2] - pose[2];
    let dist = (dx * dx + dy * dy + dz * dz).sqrt();
    if point[2] >= 0.0 {
        return dist;
    }
    // Straight ray split at z = 0: air fraction pz/(pz + depth).
    let pz = pose[2];
    let depth = -point[2];
    dist * (pz + slowdown * depth) / (pz + depth)
}

/// Separable raised-cosine antenna pattern evaluated exactly.
/// Unity at boresight, 0.5 at half of each aperture, zero beyond it.
pub fn antenna_gain(pose: &Pose, point: [f64; 3], radar: &RadarParams) -> f64 {
    let (b, u, v) = pose.frame();
    let d = [
        point[0] - pose.position[0],
        point[1] - pose.position[1],
        point[2] - pose.position[2],
    ];
    let db = d[0] * b[0] + d[1] * b[1] + d[2] * b[2];
    if db <= 0.0 {
        return 0.0;
    }
    let du = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
    let dv = d[0] * v[0] + d[1] * v[1] + d[2] * v[2];
    let a_az = radar.azimuth_aperture_deg.to_radians();
    let a_el = radar.elevation_aperture_deg.to_radians();
    let th_az = du.atan2(db).abs();
    let th_el = dv.atan2(db).abs();
    let g_az = if th_az >= a_az {
        0.0
    } else {
        0.5 * (1.0 + (PI * th_az / a_az).cos())
    };
    let g_el = if th_el >= a_el {
        0.0
    } else {
        0.5 * (1.0 + (PI * th_el / a_el).cos())
    };
    g_az * g_el
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSimConfig {
    pub bins: RangeBins,
    /// Half-width of the truncated sinc kernel, in range-resolution lobes.
    pub sinc_support_lobes: f64,
    /// Std-dev of additive complex Gaussian noise per sample (0 = noiseless).
    pub noise_sigma: f64,
}

impl EchoSimConfig {
    pub fn new(bins: RangeBins) -> Self {
        EchoSimConfig {
            bins,
            sinc_support_lobes: 4.0,
            noise_sigma: 0.0,
        }
    }
}

/// Per-pulse platform pose plus range-compressed complex samples.
#[derive(Debug, Clone)]
pub struct EchoSet {
    pub radar: RadarParams,
    pub bins: RangeBins,
    pub poses: Vec<Pose>,
    /// Row-major pulses x bins.
    pub samples: Vec<Complex64>,
}

impl EchoSet {
    pub fn pulse(&self, p: usize) -> &[Complex64] {
        &self.samples[p * self.bins.count..(p + 1) * self.bins.count]
    }

    pub fn pulse_count(&self) -> usize {
        self.poses.len()
    }
}

struct SimTables {
    sincos: SinCosTable,
    poly: PolyphaseSinc,
    gain: GainTable,
}

fn simulate_pulse(
    pose: &Pose,
    scene: &Scene,
    radar: &RadarParams,
    soil: &SoilModel,
    cfg: &EchoSimConfig,
    tables: &SimTables,
    noise: Option<&mut Rng>,
) -> Vec<Complex64> {
    let bins = &cfg.bins;
    let mut out = vec![Complex64::new(0.0, 0.0); bins.count];
    let (b, u, v) = pose.frame();
    let p = pose.position;
    let pz = p[2];
    let slowdown = soil.slowdown();
    let four_pi_over_lambda = 4.0 * PI / radar.wavelength_m();
    let inv_dr = 1.0 / bins.dr_m;
    let half = tables.poly.half_width() as isize;
    let count = bins.count as isize;
    let atten = soil.attenuation_db_per_m;

    for s in &scene.scatterers {
        let dx = s.position[0] - p[0];
        let dy = s.position[1] - p[1];
        let dz = s.position[2] - pz;
        let db = dx * b[0] + dy * b[1] + dz * b[2];
        let du = dx * u[0] + dy * u[1] + dz * u[2];
        let dv = dx * v[0] + dy * v[1] + dz * v[2];
        let g = tables.gain.eval(db, du, dv);
        if g <= 0.0 {
            continue;
        }
        let dist = (dx * dx + dy * dy + dz * dz).sqrt();
        let r = if s.position[2] >= 0.0 {
            dist
        } else {
            let depth = -s.position[2];
            dist * (pz + slowdown * depth) / (pz + depth)
        };
        let mut scale = g * g / (r * r);
        if atten > 0.0 && s.position[2] < 0.0 {
            // Two-way loss over the in-soil portion of the straight ray.
            let depth = -s.position[2];
            let soil_len = dist * depth / (pz + depth);
            scale *= 10f64.powf(-2.0 * soil_len * atten / 20.0);
        }
        let rotation = tables.sincos.cis_positive(four_pi_over_lambda * r);
        // exp(-j phi) = conj(exp(+j phi))
        let amp_re = (s.amplitude.re * rotation.re + s.amplitude.im * rotation.im) * scale;
        let amp_im = (s.amplitude.im * rotation.re - s.amplitude.re * rotation.im) * scale;

        let t = (r - bins.r0_m) * inv_dr;
        let i = t.floor();
        let frac = t - i;
        let (row0, row1, f) = tables.poly.row(frac);
        let j0 = i as isize - half + 1;
        let k_lo = (-j0).max(0) as usize;
        let k_hi = ((count - j0).min(2 * half)).max(0) as usize;
        if k_lo >= k_hi {
            continue;
        }
        let base = (j0 + k_lo as isize) as usize;
        let dst = &mut out[base..base + (k_hi - k_lo)];
        let w0 = &row0[k_lo..k_hi];
        let w1 = &row1[k_lo..k_hi];
        for ((o, &a), &bw) in dst.iter_mut().zip(w0).zip(w1) {
            let w = a + (bw - a) * f;
            o.re += amp_re * w;
            o.im += amp_im * w;
        }
    }

    if let Some(rng) = noise {
        let sigma = cfg.noise_sigma / std::f64::consts::SQRT_2;
        for sample in out.iter_mut() {
            *sample += Complex64::new(sigma * rng.normal(), sigma * rng.normal());
        }
    }
    out
}

fn prepare(
    scene: &Scene,
    trajectory: &Trajectory,
    radar: &RadarParams,
    soil: &SoilModel,
    cfg: &EchoSimConfig,
) -> Result<SimTables> {
    radar.validate()?;
    soil.validate()?;
    cfg.bins.validate(radar)?;
    trajectory.validate_above_surface()?;
    if trajectory.poses.is_empty() {
        return Err(CoreError::Empty("trajectory has no poses".into()));
    }
    if !(cfg.sinc_support_lobes >= 1.0) {
        return Err(CoreError::Parameter("sinc support must be >= 1 lobe".into()));
    }
    if !scene.scatterers.is_empty() {
        let (lo, hi) = range_span(scene, trajectory, soil);
        let margin = cfg.sinc_support_lobes * radar.range_resolution_m();
        if lo - margin < cfg.bins.r0_m - cfg.bins.dr_m || hi + margin > cfg.bins.last_range_m() + cfg.bins.dr_m {
            return Err(CoreError::Parameter(format!(
                "bin layout [{:.1}, {:.1}] m too short for scene ranges [{lo:.1}, {hi:.1}] m",
                cfg.bins.r0_m,
                cfg.bins.last_range_m()
            )));
        }
    }
    Ok(SimTables {
        sincos: SinCosTable::new(),
        poly: PolyphaseSinc::new(
            cfg.sinc_support_lobes,
            cfg.bins.dr_m / radar.range_resolution_m(),
        ),
        gain: GainTable::new(radar),
    })
}

/// Simulate every pulse of the trajectory. Deterministic in (scene, rng
/// seed) regardless of the execution schedule: noise streams are forked per
/// pulse and per-pulse accumulation is sequential over scatterers.
pub fn simulate_echoes(
    scene: &Scene,
    trajectory: &Trajectory,
    radar: &RadarParams,
    soil: &SoilModel,
    cfg: &EchoSimConfig,
    rng: &Rng,
) -> Result<EchoSet> {
    let tables = prepare(scene, trajectory, radar, soil, cfg)?;
    let noisy = cfg.noise_sigma > 0.0;
    let worker = |(i, pose): (usize, &Pose)| -> Vec<Complex64> {
        let mut noise = noisy.then(|| rng.fork(i as u64));
        simulate_pulse(pose, scene, radar, soil, cfg, &tables, noise.as_mut())
    };

    #[cfg(feature = "parallel")]
    let pulses: Vec<Vec<Complex64>> = {
        use rayon::prelude::*;
        trajectory.poses.par_iter().enumerate().map(worker).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let pulses: Vec<Vec<Complex64>> = trajectory.poses.iter().enumerate().map(worker).collect();

    Ok(EchoSet {
        radar: radar.clone(),
        bins: cfg.bins,
        poses: trajectory.poses.clone(),
        samples: pulses.concat(),
    })
}

/// Single-threaded variant with identical output; kept unconditionally for
/// benchmarks and scheduling-independence tests.
pub fn simulate_echoes_seq(
    scene: &Scene,
    trajectory: &Trajectory,
    radar: &RadarParams,
    soil: &SoilModel,
    cfg: &EchoSimConfig,
    rng: &Rng,
) -> Result<EchoSet> {
    let tables = prepare(scene, trajectory, radar, soil, cfg)?;
    let noisy = cfg.noise_sigma > 0.0;
    let mut samples = Vec::with_capacity(trajectory.poses.len() * cfg.bins.count);
    for (i, pose) in trajectory.poses.iter().enumerate() {
        let mut noise = noisy.then(|| rng.fork(i as u64));
        samples.extend(simulate_pulse(pose, scene, radar, soil, cfg, &tables, noise.as_mut()));
    }
    Ok(EchoSet {
        radar: radar.clone(),
        bins: cfg.bins,
        poses: trajectory.poses.clone(),
        samples,
    })
}

// --- Persistence ---------------------------------------------------------------

pub const ECHO_META_VERSION: &str = "tomosar-echoes/1";

#[derive(Debug, Serialize, Deserialize)]
struct EchoMeta {
    version: String,
    radar: RadarParams,
    bins: RangeBins,
    poses: Vec<Pose>,
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".poses.json");
    path.with_file_name(name)
}

/// Persist an echo set: the pulses-by-bins complex matrix goes through the
/// raster container, poses and radar parameters into a JSON sidecar.
pub fn write_echoes(echoes: &EchoSet, path: &Path) -> Result<()> {
    let grid = GeoGrid::new(
        (echoes.bins.r0_m, 0.0),
        echoes.bins.dr_m,
        echoes.bins.count,
        echoes.poses.len(),
        vec![0.0],
    )?;
    let plane: Vec<Complex32> = echoes
        .samples
        .iter()
        .map(|z| Complex32::new(z.re as f32, z.im as f32))
        .collect();
    let raster = Raster::from_planes(grid, vec![plane])?;
    write_raster(&raster, path)?;

    let meta = EchoMeta {
        version: ECHO_META_VERSION.to_string(),
        radar: echoes.radar.clone(),
        bins: echoes.bins,
        poses: echoes.poses.clone(),
    };
    let mp = meta_path(path);
    let json = serde_json::to_string(&meta).map_err(|e| CoreError::header(&mp, e.to_string()))?;
    std::fs::write(&mp, json).map_err(|e| CoreError::io(&mp, e))?;
    Ok(())
}

pub fn read_echoes(path: &Path) -> Result<EchoSet> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| CoreError::io(&mp, e))?;
    let meta: EchoMeta =
        serde_json::from_str(&text).map_err(|e| CoreError::header(&mp, e.to_string()))?;
    if meta.version != ECHO_META_VERSION {
        return Err(CoreError::header(
            &mp,
            format!("bad version {:?}, expected {ECHO_META_VERSION:?}", meta.version),
        ));
    }
    let raster = read_complex(path)?;
    let grid = raster.grid();
    if grid.ny != meta.poses.len() || grid.nx != meta.bins.count {
        return Err(CoreError::Mismatch(format!(
            "echo payload is {}x{} but metadata lists {} poses x {} bins",
            grid.ny,
            grid.nx,
            meta.poses.len(),
            meta.bins.count
        )));
    }
    let samples = raster
        .plane(0)
        .iter()
        .map(|z| Complex64::new(z.re as f64, z.im as f64))
        .collect();
    Ok(EchoSet {
        radar: meta.radar,
        bins: meta.bins,
        poses: meta.poses,
        samples,
    })
}

/// Summary of pulse power per range bin as CSV, for quick inspection.
pub fn echo_power_csv(echoes: &EchoSet) -> String {
    let mut out = String::from("bin,range_m,mean_power\n");
    let n = echoes.pulse_count() as f64;
    for j in 0..echoes.bins.count {
        let mut acc = 0.0;
        for p in 0..echoes.pulse_count() {
            acc += echoes.pulse(p)[j].norm_sqr();
        }
        let _ = writeln!(
            out,
            "{},{},{}",
            j,
            echoes.bins.r0_m + j as f64 * echoes.bins.dr_m,
            acc / n
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{helical_trajectory, ScattererTag, Scatterer};

    fn nadir_pose(alt: f64) -> Pose {
        Pose {
            position: [0.0, 0.0, alt],
            heading_rad: 0.0,
            boresight: [0.0, 0.0, -1.0],
        }
    }

    fn test_scene(scatterers: Vec<Scatterer>) -> Scene {
        let extent = GeoGrid::surface((-10.0, -10.0), 0.2, 101, 101).unwrap();
        let mut scene = Scene::empty(extent);
        scene.scatterers = scatterers;
        scene
    }

    fn unit_scatterer(pos: [f64; 3]) -> Scatterer {
        Scatterer {
            position: pos,
            amplitude: Complex64::new(1.0, 0.0),
            tag: ScattererTag::Soil,
        }
    }

    fn sim_config() -> EchoSimConfig {
        EchoSimConfig::new(RangeBins {
            r0_m: 0.0,
            dr_m: 0.75,
            count: 80,
        })
    }

    #[test]
    fn surface_point_path_is_geometric() {
        let soil = SoilModel::default();
        let d = two_way_path(&nadir_pose(30.0), [0.0, 0.0, 0.0], &soil).unwrap();
        assert!((d - 30.0).abs() < 1e-12);
    }

    #[test]
    fn buried_point_is_slowed_by_sqrt_eps() {
        let soil = SoilModel::default(); // eps_r = 4 => slowdown 2
        let d = two_way_path(&nadir_pose(30.0), [0.0, 0.0, -1.0], &soil).unwrap();
        assert!((d - 32.0).abs() < 1e-12, "{d}");
    }

    #[test]
    fn vacuum_soil_reduces_to_distance() {
        let soil = SoilModel {
            relative_permittivity: 1.0,
            ..SoilModel::default()
        };
        let d = two_way_path(&nadir_pose(30.0), [3.0, 4.0, -1.0], &soil).unwrap();
        let exact = (9.0 + 16.0 + 31.0 * 31.0f64).sqrt();
        assert!((d - exact).abs() < 1e-12);
    }

    #[test]
    fn pose_below_surface_is_rejected() {
        let pose = Pose {
            position: [0.0, 0.0, -1.0],
            heading_rad: 0.0,
            boresight: [0.0, 0.0, -1.0],
        };
        assert!(two_way_path(&pose, [0.0, 0.0, 0.0], &SoilModel::default()).is_err());
    }

    #[test]
    fn gain_is_one_at_boresight_and_half_at_half_aperture() {
        let radar = RadarParams::default();
        let pose = nadir_pose(30.0);
        assert!((antenna_gain(&pose, [0.0, 0.0, 0.0], &radar) - 1.0).abs() < 1e-12);

        // Tilt in the elevation plane (cross-track v axis) only.
        let (_, _, v) = pose.frame();
        let half = radar.elevation_aperture_deg.to_radians() / 2.0;
        let dir = [
            -pose.boresight[0] * half.cos() - v[0] * half.sin(),
            -pose.boresight[1] * half.cos() - v[1] * half.sin(),
            -pose.boresight[2] * half.cos() - v[2] * half.sin(),
        ];
        let point = [
            pose.position[0] - dir[0] * 10.0,
            pose.position[1] - dir[1] * 10.0,
            pose.position[2] - dir[2] * 10.0,
        ];
        let g = antenna_gain(&pose, point, &radar);
        assert!((g - 0.5).abs() < 1e-12, "gain at half-aperture {g}");

        // Beyond the aperture the pattern is exactly zero.
        let beyond = radar.elevation_aperture_deg.to_radians() * 1.01;
        let dir = [
            -pose.boresight[0] * beyond.cos() - v[0] * beyond.sin(),
            -pose.boresight[1] * beyond.cos() - v[1] * beyond.sin(),
            -pose.boresight[2] * beyond.cos() - v[2] * beyond.sin(),
        ];
        let point = [
            pose.position[0] - dir[0] * 10.0,
            pose.position[1] - dir[1] * 10.0,
            pose.position[2] - dir[2] * 10.0,
        ];
        assert_eq!(antenna_gain(&pose, point, &radar), 0.0);
    }

    #[test]
    fn single_scatterer_peak_amplitude_and_phase() {
        let radar = RadarParams::default();
        let soil = SoilModel::default();
        let scene = test_scene(vec![unit_scatterer([0.0, 0.0, 0.0])]);
        let traj = Trajectory {
            poses: vec![nadir_pose(30.0)],
            arc_step_m: 1.0,
        };
        let cfg = sim_config();
        let echoes = simulate_echoes(&scene, &traj, &radar, &soil, &cfg, &Rng::new(0)).unwrap();

        // Bin 40 sits exactly at 30 m, so sinc contributes exactly 1 there.
        let peak_bin = 40;
        let peak = echoes.pulse(0)[peak_bin];
        let expected_mag = 1.0 / (30.0 * 30.0);
        // Phase-table interpolation shortens |e^{j phi}| by up to ~2e-8.
        assert!(
            (peak.norm() - expected_mag).abs() / expected_mag < 1e-7,
            "peak {} vs {}",
            peak.norm(),
            expected_mag
        );
        // Every other bin is below the peak.
        for (j, s) in echoes.pulse(0).iter().enumerate() {
            if j != peak_bin {
                assert!(s.norm() < peak.norm());
            }
        }
        // Phase equals -4 pi R / lambda mod 2 pi.
        let want = (-4.0 * PI * 30.0 / radar.wavelength_m()).rem_euclid(std::f64::consts::TAU);
        let got = peak.arg().rem_euclid(std::f64::consts::TAU);
        let diff = (got - want + PI).rem_euclid(std::f64::consts::TAU) - PI;
        assert!(diff.abs() < 1e-6, "phase diff {diff}");
    }

    #[test]
    fn empty_scene_gives_zero_samples() {
        let radar = RadarParams::default();
        let scene = test_scene(vec![]);
        let traj = Trajectory {
            poses: vec![nadir_pose(30.0)],
            arc_step_m: 1.0,
        };
        let echoes =
            simulate_echoes(&scene, &traj, &radar, &SoilModel::default(), &sim_config(), &Rng::new(0))
                .unwrap();
        assert!(echoes.samples.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn two_scatterers_at_two_lobes_resolve() {
        let radar = RadarParams::default();
        let rho = radar.range_resolution_m();
        assert!((rho - 2.998).abs() < 1e-2);
        let scene = test_scene(vec![
            unit_scatterer([0.0, 0.0, 0.0]),
            unit_scatterer([0.0, 0.0, -2.0 * rho / 2.0]), // buried: slowdown 2 doubles depth
        ]);
        let traj = Trajectory {
            poses: vec![nadir_pose(30.0)],
            arc_step_m: 1.0,
        };
        let echoes = simulate_echoes(
            &scene,
            &traj,
            &radar,
            &SoilModel::default(),
            &sim_config(),
            &Rng::new(0),
        )
        .unwrap();
        let mags: Vec<f64> = echoes.pulse(0).iter().map(|z| z.norm()).collect();
        // Expect the two dominant local maxima at 30 m (bin 40) and
        // 30 + 2 rho (bin 48); the first sinc's sidelobes must not merge them.
        let bin_b = 40 + (2.0 * rho / 0.75).round() as usize;
        let mut maxima: Vec<(usize, f64)> = (1..mags.len() - 1)
            .filter(|&j| mags[j] > mags[j - 1] && mags[j] >= mags[j + 1])
            .map(|j| (j, mags[j]))
            .collect();
        maxima.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let mut top: Vec<usize> = maxima.iter().take(2).map(|m| m.0).collect();
        top.sort_unstable();
        // Sidelobe interference may nudge a peak by one oversampled bin.
        assert_eq!(top[0], 40, "first peak at bin {}", top[0]);
        assert!(
            (top[1] as i64 - bin_b as i64).abs() <= 1,
            "second peak at bin {} (expected near {bin_b})",
            top[1]
        );
        // A clear dip between the two.
        let mid = (40 + bin_b) / 2;
        assert!(mags[mid] < 0.5 * mags[40]);
    }

    #[test]
    fn echoes_are_linear_and_homogeneous() {
        let radar = RadarParams::default();
        let soil = SoilModel::default();
        let traj = helical_trajectory((0.0, 0.0), (25.0, 25.0), (30.0, 30.0), 1.0, 3.0).unwrap();
        let cfg = EchoSimConfig::new(RangeBins {
            r0_m: 10.0,
            dr_m: 0.75,
            count: 120,
        });
        let a = test_scene(vec![unit_scatterer([1.0, 2.0, 0.0])]);
        let b = test_scene(vec![unit_scatterer([-3.0, 0.5, -0.5])]);
        let mut both = a.clone();
        both.scatterers.extend(b.scatterers.iter().cloned());

        let rng = Rng::new(0);
        let ea = simulate_echoes(&a, &traj, &radar, &soil, &cfg, &rng).unwrap();
        let eb = simulate_echoes(&b, &traj, &radar, &soil, &cfg, &rng).unwrap();
        let eab = simulate_echoes(&both, &traj, &radar, &soil, &cfg, &rng).unwrap();
        let norm: f64 = eab.samples.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut err = 0.0f64;
        for i in 0..eab.samples.len() {
            err += (eab.samples[i] - ea.samples[i] - eb.samples[i]).norm_sqr();
        }
        assert!(err.sqrt() <= 1e-9 * norm.max(1e-300), "superposition error {err}");

        let mut doubled = a.clone();
        for s in doubled.scatterers.iter_mut() {
            s.amplitude *= 2.0;
        }
        let e2 = simulate_echoes(&doubled, &traj, &radar, &soil, &cfg, &rng).unwrap();
        for i in 0..e2.samples.len() {
            assert!((e2.samples[i] - 2.0 * ea.samples[i]).norm() <= 1e-12 * (1.0 + ea.samples[i].norm()));
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let radar = RadarParams::default();
        let soil = SoilModel::default();
        let traj = helical_trajectory((0.0, 0.0), (25.0, 25.0), (30.0, 30.0), 1.0, 5.0).unwrap();
        let cfg = EchoSimConfig {
            noise_sigma: 0.1,
            ..EchoSimConfig::new(RangeBins {
                r0_m: 10.0,
                dr_m: 0.75,
                count: 120,
            })
        };
        let scene = test_scene(vec![
            unit_scatterer([0.0, 0.0, 0.0]),
            unit_scatterer([2.0, -1.0, -0.6]),
        ]);
        let rng = Rng::new(33);
        let par = simulate_echoes(&scene, &traj, &radar, &soil, &cfg, &rng).unwrap();
        let seq = simulate_echoes_seq(&scene, &traj, &radar, &soil, &cfg, &rng).unwrap();
        assert_eq!(par.samples, seq.samples);
    }

    #[test]
    fn short_bin_layout_is_rejected() {
        let radar = RadarParams::default();
        let scene = test_scene(vec![unit_scatterer([0.0, 0.0, 0.0])]);
        let traj = Trajectory {
            poses: vec![nadir_pose(300.0)],
            arc_step_m: 1.0,
        };
        let err = simulate_echoes(
            &scene,
            &traj,
            &radar,
            &SoilModel::default(),
            &sim_config(),
            &Rng::new(0),
        )
        .unwrap_err();
        assert!(err.to_string().contains("too short"), "{err}");
    }

    #[test]
    fn echo_round_trip_through_container() {
        let dir = std::env::temp_dir().join(format!("tomosar-echo-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pulses.echo");
        let radar = RadarParams::default();
        let traj = helical_trajectory((0.0, 0.0), (25.0, 25.0), (30.0, 30.0), 1.0, 10.0).unwrap();
        let scene = test_scene(vec![unit_scatterer([0.0, 0.0, 0.0])]);
        let cfg = EchoSimConfig::new(RangeBins {
            r0_m: 10.0,
            dr_m: 0.75,
            count: 100,
        });
        let echoes =
            simulate_echoes(&scene, &traj, &radar, &SoilModel::default(), &cfg, &Rng::new(0)).unwrap();
        write_echoes(&echoes, &path).unwrap();
        let back = read_echoes(&path).unwrap();
        assert_eq!(back.poses.len(), echoes.poses.len());
        assert_eq!(back.bins, echoes.bins);
        // f32 quantization bound on the payload round trip.
        for (a, b) in back.samples.iter().zip(&echoes.samples) {
            assert!((a - b).norm() <= 1e-6 * (1.0 + b.norm()));
        }
    }
}

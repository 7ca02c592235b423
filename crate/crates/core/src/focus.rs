//! Time-domain back-projection of echo sets into tomographic layer stacks.
//!
//! Every output pixel coherently sums all pulses, phase-compensated by the
//! equivalent two-way path to the pixel at the layer depth:
//!
//! `pixel = (1/N_used) sum_p w(p, x) s_p(R_eq(p, x)) exp(+j 4 pi R_eq / lambda)`
//!
//! with `w = R^2 / G^2` when radiometric correction is on (inverting the
//! simulator's spreading/gain law) and `N_used` the pulses whose antenna
//! gain toward the pixel exceeds the configured floor. Pixels no pulse
//! illuminates are flagged invalid rather than zeroed.
//!
//! Layers are processed one at a time and rows of a layer in parallel; each
//! pixel's pulse sum runs in a fixed order, so output is bit-identical no
//! matter the scheduling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::echo::EchoSet;
use crate::error::{CoreError, Result};
use crate::grid::GeoGrid;
use crate::image::{Complex32, ComplexImage, Raster, RealImage, TomographicStack};
use crate::lut::{GainTable, SinCosTable};
use crate::scene::SoilModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeInterp {
    Nearest,
    Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FocusConfig {
    /// Output grid: XY layout plus the depth list (one layer per depth).
    pub grid: GeoGrid,
    pub interpolation: RangeInterp,
    /// Undo spreading loss and antenna pattern so magnitudes reflect target
    /// reflectivity.
    pub radiometric: bool,
    /// Must match the simulation soil for phase coherence at depth.
    pub soil: SoilModel,
    /// Pulses with pattern gain at or below this floor are skipped; keeps the
    /// R^2/G^2 radiometric weight bounded at beam edges.
    pub gain_floor: f64,
}

impl FocusConfig {
    pub fn new(grid: GeoGrid, soil: SoilModel) -> Self {
        FocusConfig {
            grid,
            interpolation: RangeInterp::Linear,
            radiometric: true,
            soil,
            gain_floor: 1e-3,
        }
    }
}

/// Per-pulse constants in structure-of-arrays layout so the inner pixel loop
/// streams compact cache-resident vectors.
struct PulseArrays {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    bx: Vec<f64>,
    by: Vec<f64>,
    bz: Vec<f64>,
    ux: Vec<f64>,
    uy: Vec<f64>,
    uz: Vec<f64>,
    vx: Vec<f64>,
    vy: Vec<f64>,
    vz: Vec<f64>,
}

impl PulseArrays {
    fn len(&self) -> usize {
        self.x.len()
    }
}

/// Scratch row state reused across pulses of one row: geometry-pass outputs
/// and the running per-pixel accumulators.
struct RowScratch {
    r: Vec<f64>,
    taz: Vec<f64>,
    tel: Vec<f64>,
    acc_re: Vec<f64>,
    acc_im: Vec<f64>,
    used: Vec<u32>,
}

struct FocusKernel<'a> {
    echoes: &'a EchoSet,
    pulses: PulseArrays,
    sincos: SinCosTable,
    gain: GainTable,
    four_pi_over_lambda: f64,
    slowdown: f64,
}

impl<'a> FocusKernel<'a> {
    fn new(echoes: &'a EchoSet, config: &FocusConfig) -> Result<Self> {
        echoes.radar.validate()?;
        config.soil.validate()?;
        echoes.bins.validate(&echoes.radar)?;
        if echoes.poses.is_empty() {
            return Err(CoreError::Empty("echo set has no pulses".into()));
        }
        if !(config.gain_floor > 0.0) {
            return Err(CoreError::Parameter("gain_floor must be > 0".into()));
        }
        for pose in &echoes.poses {
            if pose.position[2] <= 0.0 {
                return Err(CoreError::Parameter(
                    "echo pose at or below the surface".into(),
                ));
            }
        }
        let n = echoes.poses.len();
        let mut pulses = PulseArrays {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            bx: Vec::with_capacity(n),
            by: Vec::with_capacity(n),
            bz: Vec::with_capacity(n),
            ux: Vec::with_capacity(n),
            uy: Vec::with_capacity(n),
            uz: Vec::with_capacity(n),
            vx: Vec::with_capacity(n),
            vy: Vec::with_capacity(n),
            vz: Vec::with_capacity(n),
        };
        for p in &echoes.poses {
            let (b, u, v) = p.frame();
            pulses.x.push(p.position[0]);
            pulses.y.push(p.position[1]);
            pulses.z.push(p.position[2]);
            pulses.bx.push(b[0]);
            pulses.by.push(b[1]);
            pulses.bz.push(b[2]);
            pulses.ux.push(u[0]);
            pulses.uy.push(u[1]);
            pulses.uz.push(u[2]);
            pulses.vx.push(v[0]);
            pulses.vy.push(v[1]);
            pulses.vz.push(v[2]);
        }
        Ok(FocusKernel {
            echoes,
            pulses,
            sincos: SinCosTable::new(),
            gain: GainTable::new(&echoes.radar),
            four_pi_over_lambda: 4.0 * PI / echoes.radar.wavelength_m(),
            slowdown: config.soil.slowdown(),
        })
    }

    /// Check that the bin layout spans every pixel-pose range at this depth.
    fn check_coverage(&self, grid: &GeoGrid, depth: f64) -> Result<()> {
        let bins = &self.echoes.bins;
        let (w, h) = grid.span_m();
        let corners = [
            (grid.origin.0, grid.origin.1),
            (grid.origin.0 + w, grid.origin.1),
            (grid.origin.0, grid.origin.1 + h),
            (grid.origin.0 + w, grid.origin.1 + h),
        ];
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for p in 0..self.pulses.len() {
            let (px, py, pz) = (self.pulses.x[p], self.pulses.y[p], self.pulses.z[p]);
            let far_corner = corners
                .iter()
                .map(|c| {
                    let dx = c.0 - px;
                    let dy = c.1 - py;
                    dx * dx + dy * dy
                })
                .fold(0.0, f64::max);
            let dz = pz + depth;
            let far = (far_corner + dz * dz).sqrt();
            let near = pz; // nadir lower bound
            let k = (pz + self.slowdown * depth) / (pz + depth);
            lo = lo.min(near);
            hi = hi.max(far * k);
        }
        if lo < bins.r0_m || hi > bins.last_range_m() {
            return Err(CoreError::Parameter(format!(
                "echo bins [{:.1}, {:.1}] m do not cover pixel ranges [{lo:.1}, {hi:.1}] m at depth {depth}",
                bins.r0_m,
                bins.last_range_m()
            )));
        }
        Ok(())
    }

    /// Back-project one row of pixels at the given depth. `kd[p]` is the
    /// per-pulse subsurface stretch factor for this layer.
    ///
    /// The pulse loop is outermost so every pulse constant stays in
    /// registers; per pulse, a branch-free geometry sweep over the row
    /// (auto-vectorizes) is followed by a scalar gather/accumulate sweep.
    /// Each pixel still accumulates pulses in index order, so the output is
    /// identical to a pixel-major evaluation bit for bit.
    #[allow(clippy::too_many_arguments)]
    fn fill_row(
        &self,
        grid: &GeoGrid,
        depth: f64,
        kd: &[f64],
        iy: usize,
        interp: RangeInterp,
        radiometric: bool,
        gain_floor: f64,
        scratch: &mut RowScratch,
        row: &mut [Complex32],
        row_invalid: &mut [bool],
    ) {
        let bins = &self.echoes.bins;
        let inv_dr = 1.0 / bins.dr_m;
        let last = bins.count - 1;
        let bin_count = bins.count;
        let y = grid.y_coord(iy);
        let z = -depth;
        let nx = row.len();
        let n_pulses = self.pulses.len();
        let samples = &self.echoes.samples;
        let c4 = self.four_pi_over_lambda;

        scratch.acc_re.iter_mut().for_each(|v| *v = 0.0);
        scratch.acc_im.iter_mut().for_each(|v| *v = 0.0);
        scratch.used.iter_mut().for_each(|v| *v = 0);

        for p in 0..n_pulses {
            let px = self.pulses.x[p];
            let dy = y - self.pulses.y[p];
            let dz = z - self.pulses.z[p];
            let cb = dy * self.pulses.by[p] + dz * self.pulses.bz[p];
            let cu = dy * self.pulses.uy[p] + dz * self.pulses.uz[p];
            let cv = dy * self.pulses.vy[p] + dz * self.pulses.vz[p];
            let d2 = dy * dy + dz * dz;
            let (bx, ux, vx) = (self.pulses.bx[p], self.pulses.ux[p], self.pulses.vx[p]);
            let kdp = kd[p];
            let x0 = grid.origin.0;
            let sp = grid.spacing;

            // Pass 1: row geometry, branch-free.
            for ix in 0..nx {
                let x = x0 + ix as f64 * sp;
                let dx = x - px;
                let db = dx * bx + cb;
                let du = dx * ux + cu;
                let dv = dx * vx + cv;
                // Behind the antenna (db <= 0) the tan coordinates are sent
                // to infinity where the gain table returns zero; both arms
                // compile to a select, keeping the loop branch-free.
                let inv = 1.0 / db.max(1e-300);
                let front = db > 0.0;
                scratch.taz[ix] = if front { du * inv } else { f64::INFINITY };
                scratch.tel[ix] = if front { dv * inv } else { f64::INFINITY };
                scratch.r[ix] = (dx * dx + d2).sqrt() * kdp;
            }

            // Pass 2: gather, rotate, accumulate.
            let base = p * bin_count;
            let pulse = &samples[base..base + bin_count];
            for ix in 0..nx {
                let gain = self.gain.eval_tans(scratch.taz[ix], scratch.tel[ix]);
                if gain <= gain_floor {
                    continue;
                }
                let r = scratch.r[ix];
                let t = (r - bins.r0_m) * inv_dr;
                if t < 0.0 || t > last as f64 {
                    continue;
                }
                let (s_re, s_im) = match interp {
                    RangeInterp::Nearest => {
                        let s = pulse[((t + 0.5) as usize).min(last)];
                        (s.re, s.im)
                    }
                    RangeInterp::Linear => {
                        let j = (t as usize).min(last - 1);
                        let f = t - j as f64;
                        let a = pulse[j];
                        let b = pulse[j + 1];
                        (a.re + (b.re - a.re) * f, a.im + (b.im - a.im) * f)
                    }
                };
                let rot = self.sincos.cis_positive(c4 * r);
                let w = if radiometric { r * r / (gain * gain) } else { 1.0 };
                scratch.acc_re[ix] += (s_re * rot.re - s_im * rot.im) * w;
                scratch.acc_im[ix] += (s_re * rot.im + s_im * rot.re) * w;
                scratch.used[ix] += 1;
            }
        }

        for ix in 0..nx {
            if scratch.used[ix] == 0 {
                row_invalid[ix] = true;
                row[ix] = Complex32::new(0.0, 0.0);
            } else {
                let scale = 1.0 / scratch.used[ix] as f64;
                row[ix] = Complex32::new(
                    (scratch.acc_re[ix] * scale) as f32,
                    (scratch.acc_im[ix] * scale) as f32,
                );
            }
        }
    }
}

fn backproject_layer_inner(
    kernel: &FocusKernel<'_>,
    config: &FocusConfig,
    depth: f64,
    parallel: bool,
) -> Result<ComplexImage> {
    let grid = config.grid.with_depths(vec![depth])?;
    kernel.check_coverage(&grid, depth)?;
    let nx = grid.nx;
    let ny = grid.ny;
    let n_pulses = kernel.pulses.len();
    let mut plane = vec![Complex32::new(0.0, 0.0); nx * ny];
    let mut invalid = vec![false; nx * ny];

    // Per-pulse subsurface stretch for this layer.
    let kd: Vec<f64> = (0..n_pulses)
        .map(|p| {
            let pz = kernel.pulses.z[p];
            if depth > 0.0 {
                (pz + kernel.slowdown * depth) / (pz + depth)
            } else {
                1.0
            }
        })
        .collect();

    let fill = |(iy, (row, inv)): (usize, (&mut [Complex32], &mut [bool]))| {
        let mut scratch = RowScratch {
            r: vec![0.0; nx],
            taz: vec![0.0; nx],
            tel: vec![0.0; nx],
            acc_re: vec![0.0; nx],
            acc_im: vec![0.0; nx],
            used: vec![0; nx],
        };
        kernel.fill_row(
            &grid,
            depth,
            &kd,
            iy,
            config.interpolation,
            config.radiometric,
            config.gain_floor,
            &mut scratch,
            row,
            inv,
        );
    };

    #[cfg(feature = "parallel")]
    {
        if parallel {
            use rayon::prelude::*;
            plane
                .par_chunks_mut(nx)
                .zip(invalid.par_chunks_mut(nx))
                .enumerate()
                .map(|(iy, (row, inv))| (iy, (row, inv)))
                .for_each(fill);
        } else {
            plane
                .chunks_mut(nx)
                .zip(invalid.chunks_mut(nx))
                .enumerate()
                .map(|(iy, (row, inv))| (iy, (row, inv)))
                .for_each(fill);
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = parallel;
        plane
            .chunks_mut(nx)
            .zip(invalid.chunks_mut(nx))
            .enumerate()
            .map(|(iy, (row, inv))| (iy, (row, inv)))
            .for_each(fill);
    }

    let mut image = Raster::from_planes(grid, vec![plane])?;
    for (idx, bad) in invalid.iter().enumerate() {
        if *bad {
            image.mark_invalid(0, idx);
        }
    }
    Ok(image)
}

/// Focus one depth layer.
pub fn backproject_layer(echoes: &EchoSet, config: &FocusConfig, depth: f64) -> Result<ComplexImage> {
    if depth < 0.0 {
        return Err(CoreError::Parameter(format!("negative depth {depth}")));
    }
    let kernel = FocusKernel::new(echoes, config)?;
    backproject_layer_inner(&kernel, config, depth, true)
}

/// Single-threaded layer focusing with bit-identical output; kept for
/// benchmarks and the scheduling-independence tests.
pub fn backproject_layer_seq(
    echoes: &EchoSet,
    config: &FocusConfig,
    depth: f64,
) -> Result<ComplexImage> {
    if depth < 0.0 {
        return Err(CoreError::Parameter(format!("negative depth {depth}")));
    }
    let kernel = FocusKernel::new(echoes, config)?;
    backproject_layer_inner(&kernel, config, depth, false)
}

/// Focus every configured depth into a stack, phase-matched per layer via the
/// two-layer path model.
pub fn backproject_stack(echoes: &EchoSet, config: &FocusConfig) -> Result<TomographicStack> {
    if config.grid.depths.iter().any(|&d| d < 0.0) {
        return Err(CoreError::Parameter("stack depths must be >= 0".into()));
    }
    let kernel = FocusKernel::new(echoes, config)?;
    let mut planes = Vec::with_capacity(config.grid.depths.len());
    let mut invalids: Vec<Vec<u32>> = Vec::with_capacity(config.grid.depths.len());
    for &depth in &config.grid.depths {
        let layer = backproject_layer_inner(&kernel, config, depth, true)?;
        invalids.push(layer.invalid_indices().remove(0));
        planes.push(layer.plane(0).to_vec());
    }
    let mut stack = Raster::from_planes(config.grid.clone(), planes)?;
    stack.set_invalid_indices(&invalids)?;
    Ok(stack)
}

/// Convert a complex image or stack to decibels relative to `reference`
/// (the global valid maximum when `None`), clamped at `floor_db`.
pub fn magnitude_db(
    image: &Raster<Complex32>,
    floor_db: f64,
    reference: Option<f64>,
) -> Result<RealImage> {
    if !(floor_db < 0.0) {
        return Err(CoreError::Parameter(format!(
            "floor_db must be negative, got {floor_db}"
        )));
    }
    let reference = match reference {
        Some(r) => {
            if !(r > 0.0) {
                return Err(CoreError::Parameter("reference must be > 0".into()));
            }
            r
        }
        None => {
            let mut max = 0.0f64;
            for k in 0..image.plane_count() {
                for (i, z) in image.plane(k).iter().enumerate() {
                    if image.is_valid(k, i) {
                        max = max.max(z.norm() as f64);
                    }
                }
            }
            if max <= 0.0 {
                return Err(CoreError::Numeric(
                    "all-zero image has no reference level for dB conversion".into(),
                ));
            }
            max
        }
    };

    let mut out = Raster::<f32>::zeros(image.grid().clone());
    for k in 0..image.plane_count() {
        let src = image.plane(k).to_vec();
        for (i, z) in src.iter().enumerate() {
            let v = if image.is_valid(k, i) {
                let mag = z.norm() as f64;
                if mag <= 0.0 {
                    floor_db
                } else {
                    (20.0 * (mag / reference).log10()).max(floor_db)
                }
            } else {
                out.mark_invalid(k, i);
                floor_db
            };
            out.plane_mut(k)[i] = v as f32;
        }
    }
    Ok(out)
}

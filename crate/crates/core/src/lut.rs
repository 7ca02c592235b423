//! Lookup tables for the hot loops shared by the echo simulator and the
//! back-projection kernel.
//!
//! The simulator and the focuser must evaluate the *same* antenna pattern and
//! phase terms so that radiometric correction cancels exactly; both therefore
//! go through these tables. Table interpolation error is well below every
//! tolerance asserted in the test suite (phase < 2e-8 rad, gain < 2e-6).

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::scene::RadarParams;

/// Linearly interpolated (cos, sin) over [0, 2pi).
pub(crate) struct SinCosTable {
    inv_step: f64,
    table: Vec<[f64; 2]>,
}

impl SinCosTable {
    /// `cis` for phases already known to be non-negative; skips the general
    /// sign handling of `rem_euclid`.
    #[inline]
    pub(crate) fn cis_positive(&self, phase: f64) -> Complex64 {
        debug_assert!(phase >= 0.0);
        const INV_TAU: f64 = 1.0 / TAU;
        let p = phase - TAU * (phase * INV_TAU).floor();
        let u = p * self.inv_step;
        let i = u as usize;
        let f = u - i as f64;
        let a = self.table[i];
        let b = self.table[i + 1];
        Complex64::new(a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f)
    }
}

impl SinCosTable {
    pub(crate) fn new() -> Self {
        let n = 1 << 14;
        let step = TAU / n as f64;
        let mut table = Vec::with_capacity(n + 2);
        for i in 0..=(n + 1) {
            let a = i as f64 * step;
            table.push([a.cos(), a.sin()]);
        }
        SinCosTable {
            inv_step: 1.0 / step,
            table,
        }
    }

    /// e^{i phase} for arbitrary (possibly huge) phase.
    #[inline]
    pub(crate) fn cis(&self, phase: f64) -> Complex64 {
        let p = phase.rem_euclid(TAU);
        let u = p * self.inv_step;
        let i = u as usize;
        let f = u - i as f64;
        let a = self.table[i];
        let b = self.table[i + 1];
        Complex64::new(a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f)
    }
}

/// Linearly interpolated sinc(pi u) = sin(pi u)/(pi u) over |u| <= support.
pub(crate) struct SincTable {
    support: f64,
    inv_step: f64,
    table: Vec<f64>,
}

impl SincTable {
    pub(crate) fn new(support: f64) -> Self {
        let n = 8192;
        let step = support / n as f64;
        let mut table = Vec::with_capacity(n + 2);
        for i in 0..=(n + 1) {
            let u = i as f64 * step;
            table.push(if u == 0.0 { 1.0 } else { (PI * u).sin() / (PI * u) });
        }
        SincTable {
            support,
            inv_step: 1.0 / step,
            table,
        }
    }

    #[inline]
    pub(crate) fn eval(&self, u: f64) -> f64 {
        let a = u.abs();
        if a >= self.support {
            return 0.0;
        }
        let t = a * self.inv_step;
        let i = t as usize;
        let f = t - i as f64;
        self.table[i] + (self.table[i + 1] - self.table[i]) * f
    }
}

/// Truncated-sinc interpolation weights for every range bin inside the
/// kernel support, indexed by the fractional bin offset of the target range.
///
/// With `t = (r - r0) / dr`, bin `j` sees `sinc((t - j) * dr / rho)`; writing
/// `t = i + frac` the weight of bin `i - half + 1 + k` depends only on
/// `frac`, so one row lookup (with linear interpolation between rows) yields
/// the whole support at once.
pub(crate) struct PolyphaseSinc {
    /// Bins on each side of the truncation.
    half: usize,
    phases: usize,
    /// (phases + 1) rows of 2 * half weights.
    rows: Vec<f64>,
}

impl PolyphaseSinc {
    pub(crate) fn new(support_lobes: f64, dr_over_rho: f64) -> Self {
        assert!(support_lobes >= 1.0 && dr_over_rho > 0.0);
        let half = (support_lobes / dr_over_rho).ceil() as usize;
        let phases = 1024usize;
        let width = 2 * half;
        let mut rows = Vec::with_capacity((phases + 1) * width);
        for p in 0..=phases {
            let frac = p as f64 / phases as f64;
            for k in 0..width {
                // Bin offset from the floor index: j = i - half + 1 + k.
                let m = (half as f64 - 1.0 - k as f64) + frac;
                let u = m * dr_over_rho;
                let w = if u.abs() >= support_lobes {
                    0.0
                } else if u == 0.0 {
                    1.0
                } else {
                    (PI * u).sin() / (PI * u)
                };
                rows.push(w);
            }
        }
        PolyphaseSinc { half, phases, rows }
    }

    pub(crate) fn half_width(&self) -> usize {
        self.half
    }

    /// Interpolated weight row for fractional offset `frac` in [0, 1):
    /// returns the two bracketing rows and the blend factor.
    #[inline]
    pub(crate) fn row(&self, frac: f64) -> (&[f64], &[f64], f64) {
        let width = 2 * self.half;
        let u = frac * self.phases as f64;
        let i = (u as usize).min(self.phases - 1);
        let f = u - i as f64;
        (
            &self.rows[i * width..(i + 1) * width],
            &self.rows[(i + 1) * width..(i + 2) * width],
            f,
        )
    }
}

/// Separable raised-cosine antenna pattern tabulated over tan(angle).
///
/// The pattern per axis is g(theta) = 0.5 (1 + cos(pi theta / aperture)) for
/// |theta| <= aperture, zero beyond -- gain 0.5 at half the aperture by
/// construction. Both apertures are < 90 deg, so gain is nonzero only in
/// front of the antenna (d.b > 0) and tan(theta) = (d.axis)/(d.b) is a valid
/// table coordinate.
pub(crate) struct GainTable {
    az: AxisTable,
    el: AxisTable,
}

struct AxisTable {
    t_max: f64,
    inv_step: f64,
    table: Vec<f64>,
}

impl AxisTable {
    fn new(aperture_rad: f64) -> Self {
        assert!(aperture_rad > 0.0 && aperture_rad < PI / 2.0);
        let n = 4096;
        let t_max = aperture_rad.tan();
        let step = t_max / n as f64;
        let mut table = Vec::with_capacity(n + 2);
        for i in 0..=(n + 1) {
            let t = i as f64 * step;
            let theta = t.atan();
            table.push(if theta >= aperture_rad {
                0.0
            } else {
                0.5 * (1.0 + (PI * theta / aperture_rad).cos())
            });
        }
        AxisTable {
            t_max,
            inv_step: 1.0 / step,
            table,
        }
    }

    #[inline]
    fn eval(&self, tan_theta: f64) -> f64 {
        let a = tan_theta.abs();
        if a >= self.t_max {
            return 0.0;
        }
        let t = a * self.inv_step;
        let i = t as usize;
        let f = t - i as f64;
        self.table[i] + (self.table[i + 1] - self.table[i]) * f
    }
}

impl GainTable {
    pub(crate) fn new(radar: &RadarParams) -> Self {
        GainTable {
            az: AxisTable::new(radar.azimuth_aperture_deg.to_radians()),
            el: AxisTable::new(radar.elevation_aperture_deg.to_radians()),
        }
    }

    /// Gain from direction components in the pose frame: `db` along
    /// boresight, `du` along-track, `dv` cross-track. Zero behind.
    #[inline]
    pub(crate) fn eval(&self, db: f64, du: f64, dv: f64) -> f64 {
        if db <= 0.0 {
            return 0.0;
        }
        let inv = 1.0 / db;
        self.az.eval(du * inv) * self.el.eval(dv * inv)
    }

    /// Gain from precomputed tangent coordinates (infinite or out-of-range
    /// tangents yield zero).
    #[inline]
    pub(crate) fn eval_tans(&self, tan_az: f64, tan_el: f64) -> f64 {
        self.az.eval(tan_az) * self.el.eval(tan_el)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::RadarParams;

    #[test]
    fn cis_matches_libm() {
        let t = SinCosTable::new();
        for k in 0..10_000 {
            let phase = k as f64 * 0.7919 - 3000.0;
            let v = t.cis(phase);
            assert!((v.re - phase.cos()).abs() < 2e-8, "phase {phase}");
            assert!((v.im - phase.sin()).abs() < 2e-8, "phase {phase}");
        }
    }

    #[test]
    fn sinc_matches_closed_form() {
        let t = SincTable::new(4.0);
        assert_eq!(t.eval(0.0), 1.0);
        assert_eq!(t.eval(5.0), 0.0);
        for k in 1..4000 {
            let u = k as f64 * 1e-3;
            let exact = (PI * u).sin() / (PI * u);
            assert!((t.eval(u) - exact).abs() < 3e-7, "u {u}");
        }
    }

    #[test]
    fn cis_positive_matches_cis() {
        let t = SinCosTable::new();
        for k in 0..5000 {
            let phase = k as f64 * 1.37;
            let a = t.cis(phase);
            let b = t.cis_positive(phase);
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn polyphase_matches_direct_sinc() {
        let lobes = 4.0;
        let ratio = 0.5; // dr / rho at 2x oversampling
        let poly = PolyphaseSinc::new(lobes, ratio);
        let half = poly.half_width();
        assert_eq!(half, 8);
        for step in 0..997 {
            let t = step as f64 * 0.01711; // arbitrary fractional positions
            let i = t.floor();
            let frac = t - i;
            let (row0, row1, f) = poly.row(frac);
            for k in 0..2 * half {
                let w = row0[k] + (row1[k] - row0[k]) * f;
                let j = i - half as f64 + 1.0 + k as f64;
                let u = (t - j) * ratio;
                let exact = if u.abs() >= lobes {
                    0.0
                } else if u == 0.0 {
                    1.0
                } else {
                    (PI * u).sin() / (PI * u)
                };
                assert!((w - exact).abs() < 3e-7, "t {t} k {k}: {w} vs {exact}");
            }
        }
    }

    #[test]
    fn gain_table_matches_exact_pattern() {
        let radar = RadarParams::default();
        let t = GainTable::new(&radar);
        let a_az = radar.azimuth_aperture_deg.to_radians();
        let a_el = radar.elevation_aperture_deg.to_radians();
        for i in 0..500 {
            for &(theta_az, theta_el) in
                &[(i as f64 * a_az / 500.0, 0.0), (0.0, i as f64 * a_el / 500.0)]
            {
                let exact_az = if theta_az >= a_az {
                    0.0
                } else {
                    0.5 * (1.0 + (PI * theta_az / a_az).cos())
                };
                let exact_el = if theta_el >= a_el {
                    0.0
                } else {
                    0.5 * (1.0 + (PI * theta_el / a_el).cos())
                };
                let got = t.eval(1.0, theta_az.tan(), theta_el.tan());
                assert!(
                    (got - exact_az * exact_el).abs() < 2e-6,
                    "az {theta_az} el {theta_el}: {got} vs {}",
                    exact_az * exact_el
                );
            }
        }
    }
}

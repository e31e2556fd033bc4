//! Noise-ellipse extraction, Gaussian Wigner-function grids, squeezing-angle
//! spectra over frequency sweeps, and operating-point optimization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{
    find_critical_theta, half_bandwidth, operating_point_for_fraction, round_trip_time, Branch,
    CavitySpec, OperatingPoint,
};
use crate::engine::{choose_record, PropagateOptions, SnappedFrequency};
use crate::error::{Error, Result};
use crate::transfer::{
    measure_transfer, total_spectral_density, InputNoiseSpec, SpectralMatrix,
};
#[cfg(test)]
use crate::transfer::quadrature_noise;

/// Principal noise levels and orientation of a Gaussian state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEllipse {
    /// Smaller principal variance, vacuum units.
    pub var_min: f64,
    /// Larger principal variance, vacuum units.
    pub var_max: f64,
    /// Quadrature angle of minimum variance, rad, in (-pi/2, pi/2].
    pub angle_min: f64,
    /// 1 / sqrt(var_min * var_max).
    pub purity: f64,
}

/// Peak-normalized Gaussian Wigner function sampled on a rectangular grid
/// over (x1, x2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    /// Row-major values, `resolution x resolution`, max value 1.
    pub values: Vec<f64>,
    pub resolution: usize,
    /// Symmetric bounds: x1, x2 span [-bound, bound].
    pub bound: f64,
    pub ellipse: NoiseEllipse,
}

/// One row of a squeezing spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub omega_over_gamma: f64,
    /// Analysis frequency after snapping, rad/s.
    pub omega: f64,
    pub s11: f64,
    pub s22: f64,
    pub s12: f64,
    /// Minimum-noise angle, degrees, continuity-unwrapped across rows.
    pub angle_min_deg: f64,
    /// Noise power at the minimum-noise angle, vacuum units.
    pub min_noise: f64,
}

/// Squeezing spectrum over a frequency grid plus the context it was computed
/// in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub rows: Vec<SpectrumRow>,
    pub spec: CavitySpec,
    pub op: OperatingPoint,
    pub noise: InputNoiseSpec,
}

/// Result of the operating-point optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub op: OperatingPoint,
    /// All power fractions where the minimum-noise angle crosses zero.
    pub crossings: Vec<f64>,
    /// True when no crossing exists and the critical point was returned
    /// instead.
    pub fell_back_to_critical: bool,
}

/// Eigen-decomposition of a symmetric 2x2 spectral matrix into a noise
/// ellipse. Degenerate matrices return angle 0 by convention.
pub fn ellipse_from_spectral(s: &SpectralMatrix) -> NoiseEllipse {
    let mean = 0.5 * (s.s11 + s.s22);
    let half_diff = 0.5 * (s.s11 - s.s22);
    let rad = (half_diff * half_diff + s.s12 * s.s12).sqrt();
    let var_min = mean - rad;
    let var_max = mean + rad;
    let angle_min = if rad < 1e-12 * mean.abs().max(f64::MIN_POSITIVE) {
        0.0
    } else {
        // eigenvector of the smaller eigenvalue; two algebraically
        // equivalent forms, keep the better-conditioned one
        let v_a = (s.s12, var_min - s.s11);
        let v_b = (var_min - s.s22, s.s12);
        let v = if v_a.0.hypot(v_a.1) >= v_b.0.hypot(v_b.1) {
            v_a
        } else {
            v_b
        };
        wrap_half_pi(f64::atan2(v.1, v.0))
    };
    NoiseEllipse {
        var_min,
        var_max,
        angle_min,
        purity: 1.0 / (var_min * var_max).sqrt(),
    }
}

/// Wraps an angle into (-pi/2, pi/2] (quadrature axes are mod pi).
pub fn wrap_half_pi(angle: f64) -> f64 {
    let mut a = angle;
    while a <= -std::f64::consts::FRAC_PI_2 {
        a += std::f64::consts::PI;
    }
    while a > std::f64::consts::FRAC_PI_2 {
        a -= std::f64::consts::PI;
    }
    a
}

/// Un-normalized Gaussian Wigner density of an ellipse at a phase-space
/// point, `1/(pi sqrt(v1 v2)) exp[-u1^2/v1 - u2^2/v2]` with (u1, u2) the
/// coordinates along the principal axes.
pub fn wigner_value(ellipse: &NoiseEllipse, x1: f64, x2: f64) -> f64 {
    let (sn, cs) = ellipse.angle_min.sin_cos();
    let u1 = cs * x1 + sn * x2;
    let u2 = -sn * x1 + cs * x2;
    let norm = 1.0 / (std::f64::consts::PI * (ellipse.var_min * ellipse.var_max).sqrt());
    norm * (-u1 * u1 / ellipse.var_min - u2 * u2 / ellipse.var_max).exp()
}

/// Samples the peak-normalized Wigner function on a square grid spanning
/// [-bound, bound] in both quadratures.
pub fn wigner_grid(ellipse: &NoiseEllipse, bound: f64, resolution: usize) -> Result<WignerGrid> {
    if resolution < 2 {
        return Err(Error::InvalidInput(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    if !(ellipse.var_min > 0.0 && ellipse.var_max > 0.0) {
        return Err(Error::InvalidInput("ellipse variances must be positive".into()));
    }
    if !(bound > 0.0) {
        return Err(Error::InvalidInput("grid bound must be positive".into()));
    }
    let peak = wigner_value(ellipse, 0.0, 0.0);
    let mut values = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        let x2 = -bound + 2.0 * bound * j as f64 / (resolution - 1) as f64;
        for i in 0..resolution {
            let x1 = -bound + 2.0 * bound * i as f64 / (resolution - 1) as f64;
            values.push(wigner_value(ellipse, x1, x2) / peak);
        }
    }
    Ok(WignerGrid {
        values,
        resolution,
        bound,
        ellipse: *ellipse,
    })
}

/// Default Wigner grid: 6 sigma of the larger principal axis, 201x201.
pub fn wigner_grid_default(ellipse: &NoiseEllipse) -> Result<WignerGrid> {
    let sigma = (ellipse.var_max / 2.0).sqrt();
    wigner_grid(ellipse, 6.0 * sigma, 201)
}

/// Total output spectral density at one (snapped) frequency: four engine
/// propagations assembled into S_tot.
pub fn spectral_density_at(
    spec: &CavitySpec,
    op: &OperatingPoint,
    noise: &InputNoiseSpec,
    snapped: &SnappedFrequency,
    opts: &PropagateOptions,
) -> Result<SpectralMatrix> {
    let (t, l) = measure_transfer(spec, op, snapped, opts)?;
    total_spectral_density(&t, &l, noise)
}

/// Sweeps the squeezing spectrum over a frequency grid. Rows are computed
/// independently (in parallel) and reported in ascending frequency with a
/// continuity-unwrapped angle column.
pub fn sweep_spectrum(
    spec: &CavitySpec,
    op: &OperatingPoint,
    noise: &InputNoiseSpec,
    freq_grid: &[f64],
    opts: &PropagateOptions,
) -> Result<SpectrumTable> {
    if freq_grid.is_empty() {
        return Err(Error::InvalidInput("empty frequency grid".into()));
    }
    if freq_grid.windows(2).any(|w| w[1] <= w[0]) || freq_grid[0] <= 0.0 {
        return Err(Error::InvalidInput(
            "frequency grid must be strictly positive and ascending".into(),
        ));
    }
    let gamma = half_bandwidth(spec);
    let t_rt = round_trip_time(spec);
    let mut rows = freq_grid
        .par_iter()
        .map(|&omega| -> Result<SpectrumRow> {
            let snapped = choose_record(omega, t_rt, 8).map_err(|e| {
                Error::InvalidInput(format!("frequency {omega} rad/s: {e}"))
            })?;
            let s = spectral_density_at(spec, op, noise, &snapped, opts).map_err(|e| {
                Error::Numerics(format!("at {omega} rad/s: {e}"))
            })?;
            let ellipse = ellipse_from_spectral(&s);
            Ok(SpectrumRow {
                omega_over_gamma: snapped.omega / gamma,
                omega: snapped.omega,
                s11: s.s11,
                s22: s.s22,
                s12: s.s12,
                angle_min_deg: ellipse.angle_min.to_degrees(),
                min_noise: ellipse.var_min,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    unwrap_angles(&mut rows);
    Ok(SpectrumTable {
        rows,
        spec: *spec,
        op: *op,
        noise: *noise,
    })
}

/// Makes the angle column continuous across rows by shifting entries in
/// multiples of 180 degrees (quadrature axes are mod 180).
fn unwrap_angles(rows: &mut [SpectrumRow]) {
    for i in 1..rows.len() {
        let mut a = rows[i].angle_min_deg;
        while a - rows[i - 1].angle_min_deg > 90.0 {
            a -= 180.0;
        }
        while a - rows[i - 1].angle_min_deg < -90.0 {
            a += 180.0;
        }
        rows[i].angle_min_deg = a;
    }
}

/// Minimum-noise angle of S_tot at a fraction of the resonant power, rad.
fn angle_at_fraction(
    spec: &CavitySpec,
    drive_power: f64,
    fraction: f64,
    noise: &InputNoiseSpec,
    snapped: &SnappedFrequency,
    opts: &PropagateOptions,
) -> Result<f64> {
    let op = operating_point_for_fraction(spec, drive_power, fraction, Branch::Low)?;
    let s = spectral_density_at(spec, &op, noise, snapped, opts)?;
    Ok(ellipse_from_spectral(&s).angle_min)
}

/// Scans power fractions 0.25..0.99 for zero crossings of the minimum-noise
/// angle at `omega_target`, refines each crossing by bisection until the
/// fraction bracket is below 1e-7 (angle residual far below 1e-4 rad) and
/// returns the operating point of the highest-power crossing. Without any
/// crossing the critical point is returned with a flag.
///
/// The bracket, not the angle residual, is the stopping rule: near the
/// loss-limited floor the angle is tiny across the whole bracket while the
/// squeezing level still varies by several dB per 1e-3 of fraction, so an
/// angle-magnitude exit would stop orders of magnitude too early.
///
/// `spec` must carry theta = theta_crit for the fallback to be meaningful.
pub fn optimize_operating_point(
    spec: &CavitySpec,
    drive_power: f64,
    noise: &InputNoiseSpec,
    omega_target: f64,
    opts: &PropagateOptions,
) -> Result<OptimizeOutcome> {
    let t_rt = round_trip_time(spec);
    let snapped = choose_record(omega_target, t_rt, 8)?;
    let fractions: Vec<f64> = (0..=74).map(|i| 0.25 + 0.01 * i as f64).collect();
    let angles = fractions
        .par_iter()
        .map(|&f| angle_at_fraction(spec, drive_power, f, noise, &snapped, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut crossings = Vec::new();
    for i in 0..fractions.len() - 1 {
        let (a0, a1) = (angles[i], angles[i + 1]);
        // genuine sign change, not a mod-pi jump
        if a0 == 0.0 || (a0 * a1 < 0.0 && (a1 - a0).abs() < std::f64::consts::FRAC_PI_2) {
            let (mut lo, mut hi) = (fractions[i], fractions[i + 1]);
            let mut a_lo = a0;
            while hi - lo > 1e-7 {
                let mid = 0.5 * (lo + hi);
                let a_mid = angle_at_fraction(spec, drive_power, mid, noise, &snapped, opts)?;
                if a_mid == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if a_lo * a_mid <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    a_lo = a_mid;
                }
            }
            crossings.push(0.5 * (lo + hi));
        }
    }

    if let Some(&best) = crossings.last() {
        let op = operating_point_for_fraction(spec, drive_power, best, Branch::Low)?;
        Ok(OptimizeOutcome {
            op,
            crossings,
            fell_back_to_critical: false,
        })
    } else {
        let crit = find_critical_theta(spec, drive_power)?;
        let op = operating_point_for_fraction(spec, drive_power, crit.power_fraction, Branch::Low)?;
        Ok(OptimizeOutcome {
            op,
            crossings,
            fell_back_to_critical: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spectral(s11: f64, s22: f64, s12: f64) -> SpectralMatrix {
        SpectralMatrix {
            s11,
            s22,
            s12,
            omega: 1.0,
        }
    }

    #[test]
    fn vacuum_ellipse() {
        let e = ellipse_from_spectral(&spectral(1.0, 1.0, 0.0));
        assert_relative_eq!(e.var_min, 1.0);
        assert_relative_eq!(e.var_max, 1.0);
        assert_relative_eq!(e.angle_min, 0.0);
        assert_relative_eq!(e.purity, 1.0);
    }

    #[test]
    fn rotated_ellipse_by_construction() {
        // Rot(40 deg) diag(100, 10) Rot(40 deg)^T: var_min = 10 at 130 deg,
        // i.e. -50 deg after mod-pi wrapping
        let vt = 40f64.to_radians();
        let (sn, cs) = vt.sin_cos();
        let s = spectral(
            100.0 * cs * cs + 10.0 * sn * sn,
            100.0 * sn * sn + 10.0 * cs * cs,
            90.0 * sn * cs,
        );
        let e = ellipse_from_spectral(&s);
        assert_relative_eq!(e.var_min, 10.0, max_relative = 1e-12);
        assert_relative_eq!(e.var_max, 100.0, max_relative = 1e-12);
        assert_relative_eq!(e.angle_min.to_degrees(), -50.0, max_relative = 1e-10);
        assert_relative_eq!(e.purity, 1.0 / 1000f64.sqrt(), max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn angle_invariant_under_scaling(a in 0.1f64..10.0, b in 0.1f64..10.0,
                                         c_frac in -0.99f64..0.99, scale in 0.01f64..100.0) {
            let c = c_frac * (a * b).sqrt();
            let e1 = ellipse_from_spectral(&spectral(a, b, c));
            let e2 = ellipse_from_spectral(&spectral(scale * a, scale * b, scale * c));
            prop_assert!((e1.angle_min - e2.angle_min).abs() < 1e-9);
        }

        #[test]
        fn ellipse_roundtrip(vmin in 0.01f64..1.0, ratio in 1.01f64..100.0,
                             angle_frac in -0.49f64..0.5) {
            // synthesize S from an ellipse and recover it
            let vmax = vmin * ratio;
            let angle = angle_frac * std::f64::consts::PI;
            let (sn, cs) = angle.sin_cos();
            let s = spectral(
                vmin * cs * cs + vmax * sn * sn,
                vmin * sn * sn + vmax * cs * cs,
                (vmin - vmax) * sn * cs,
            );
            let e = ellipse_from_spectral(&s);
            prop_assert!((e.var_min - vmin).abs() < 1e-10 * vmax);
            prop_assert!((e.var_max - vmax).abs() < 1e-10 * vmax);
            prop_assert!((wrap_half_pi(e.angle_min - angle)).abs() < 1e-7);
        }
    }

    #[test]
    fn angle_min_is_argmin_of_quadrature_noise() {
        let s = spectral(3.0, 1.5, -0.9);
        let e = ellipse_from_spectral(&s);
        let at_min = quadrature_noise(&s, e.angle_min);
        assert_relative_eq!(at_min, e.var_min, max_relative = 1e-12);
        for i in 0..1000 {
            let z = i as f64 / 1000.0 * std::f64::consts::PI;
            assert!(quadrature_noise(&s, z) >= at_min - 1e-12);
        }
    }

    #[test]
    fn wigner_vacuum_isotropic() {
        let e = ellipse_from_spectral(&spectral(1.0, 1.0, 0.0));
        let g = wigner_grid(&e, 4.0, 41).unwrap();
        assert_relative_eq!(g.values[(41 / 2) * 41 + 41 / 2], 1.0);
        // isotropy: value depends only on radius
        let v_x = wigner_value(&e, 1.3, 0.0);
        let v_y = wigner_value(&e, 0.0, 1.3);
        let v_d = wigner_value(&e, 1.3 / 2f64.sqrt(), 1.3 / 2f64.sqrt());
        assert_relative_eq!(v_x, v_y, max_relative = 1e-12);
        assert_relative_eq!(v_x, v_d, max_relative = 1e-12);
    }

    #[test]
    fn wigner_squeezed_state_axes() {
        // pure 10 dB amplitude-squeezed state: variances (0.1, 10) at angle 0
        let e = ellipse_from_spectral(&spectral(0.1, 10.0, 0.0));
        assert_relative_eq!(e.var_min, 0.1, max_relative = 1e-12);
        assert_relative_eq!(e.var_max, 10.0, max_relative = 1e-12);
        assert_relative_eq!(e.angle_min, 0.0);
        assert_relative_eq!(e.purity, 1.0, max_relative = 1e-12);
        // narrow along x1, wide along x2
        let v = wigner_value(&e, 0.5, 0.0) / wigner_value(&e, 0.0, 0.0);
        let w = wigner_value(&e, 0.0, 0.5) / wigner_value(&e, 0.0, 0.0);
        assert!(v < w);
    }

    #[test]
    fn wigner_integral_is_one() {
        // quasi-probability normalization via grid quadrature at >= 6 sigma
        for (vmin, vmax, angle) in [(1.0, 1.0, 0.0), (0.1, 10.0, 0.0), (0.5, 4.0, 0.7)] {
            let e = NoiseEllipse {
                var_min: vmin,
                var_max: vmax,
                angle_min: angle,
                purity: 1.0 / (vmin * vmax).sqrt(),
            };
            let bound = 6.0 * (vmax / 2.0).sqrt();
            let n = 401;
            let cell = (2.0 * bound / (n - 1) as f64).powi(2);
            let mut integral = 0.0;
            for j in 0..n {
                let x2 = -bound + 2.0 * bound * j as f64 / (n - 1) as f64;
                for i in 0..n {
                    let x1 = -bound + 2.0 * bound * i as f64 / (n - 1) as f64;
                    integral += wigner_value(&e, x1, x2) * cell;
                }
            }
            assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
        }
    }

    #[test]
    fn wigner_grid_validation() {
        let e = ellipse_from_spectral(&spectral(1.0, 1.0, 0.0));
        assert!(wigner_grid(&e, 4.0, 1).is_err());
        assert!(wigner_grid(&e, -1.0, 41).is_err());
        let g = wigner_grid_default(&e).unwrap();
        assert_eq!(g.resolution, 201);
        assert_eq!(g.values.len(), 201 * 201);
        assert_relative_eq!(g.bound, 6.0 / 2f64.sqrt());
    }

    #[test]
    fn unwrap_angle_continuity() {
        let mut rows: Vec<SpectrumRow> = [80.0, 88.0, -89.0, -80.0]
            .iter()
            .map(|&a| SpectrumRow {
                omega_over_gamma: 1.0,
                omega: 1.0,
                s11: 1.0,
                s22: 1.0,
                s12: 0.0,
                angle_min_deg: a,
                min_noise: 1.0,
            })
            .collect();
        unwrap_angles(&mut rows);
        let angles: Vec<f64> = rows.iter().map(|r| r.angle_min_deg).collect();
        assert_eq!(angles, vec![80.0, 88.0, 91.0, 100.0]);
    }
}

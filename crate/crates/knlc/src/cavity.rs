//! Static cavity physics: steady-state solutions of the transcendental
//! resonance equation, critical Kerr strength, operating-point selection and
//! derived cavity scales.
//!
//! The cavity is a two-mirror resonator with a Kerr medium. All round-trip
//! loss is mapped onto the end mirror (transmittance `tau_end = l_rt`). The
//! steady-state intra-cavity field obeys
//!
//! ```text
//! E = i tau_c E_in / (1 - rho_c rho_end exp[2i (Phi + theta |E|^2)])
//! ```
//!
//! Instead of iterating this transcendental equation in `Phi`, curves are
//! parametrized by intra-cavity power `P = |E|^2`, for which the detuning is
//! closed-form.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const UNITARITY_TOL: f64 = 1e-12;

/// Static physical description of the Kerr non-linear cavity.
///
/// `rho_c`/`tau_c` are amplitude reflectance/transmittance of the coupling
/// mirror, `rho_end` of the end mirror. The round-trip amplitude loss factor
/// `l_rt` is carried entirely by the end mirror (`tau_end = l_rt`), so
/// `rho_end^2 + l_rt^2 = 1`. `theta` is the Kerr phase coefficient in rad/W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavitySpec {
    pub rho_c: f64,
    pub tau_c: f64,
    pub rho_end: f64,
    pub l_rt: f64,
    pub length_l: f64,
    pub theta: f64,
}

impl CavitySpec {
    /// Builds a spec from amplitude coefficients, checking the unitarity
    /// invariants of both mirrors.
    pub fn new(
        rho_c: f64,
        tau_c: f64,
        rho_end: f64,
        l_rt: f64,
        length_l: f64,
        theta: f64,
    ) -> Result<Self> {
        let spec = CavitySpec {
            rho_c,
            tau_c,
            rho_end,
            l_rt,
            length_l,
            theta,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec from power quantities: coupler power reflectance
    /// `rho_c_sq` and round-trip power loss `l_rt_sq`. The amplitude
    /// coefficients are derived so the unitarity invariants hold exactly.
    pub fn from_power_coefficients(
        rho_c_sq: f64,
        l_rt_sq: f64,
        length_l: f64,
        theta: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&rho_c_sq) || rho_c_sq == 0.0 {
            return Err(Error::InvalidSpec(format!(
                "coupler power reflectance must lie in (0,1), got {rho_c_sq}"
            )));
        }
        if !(0.0..1.0).contains(&l_rt_sq) {
            return Err(Error::InvalidSpec(format!(
                "round-trip power loss must lie in [0,1), got {l_rt_sq}"
            )));
        }
        CavitySpec::new(
            rho_c_sq.sqrt(),
            (1.0 - rho_c_sq).sqrt(),
            (1.0 - l_rt_sq).sqrt(),
            l_rt_sq.sqrt(),
            length_l,
            theta,
        )
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho_c > 0.0 && self.rho_c < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "rho_c must lie in (0,1), got {}",
                self.rho_c
            )));
        }
        if (self.rho_c * self.rho_c + self.tau_c * self.tau_c - 1.0).abs() > UNITARITY_TOL {
            return Err(Error::InvalidSpec(
                "coupling mirror not lossless: rho_c^2 + tau_c^2 != 1".into(),
            ));
        }
        if (self.rho_end * self.rho_end + self.l_rt * self.l_rt - 1.0).abs() > UNITARITY_TOL {
            return Err(Error::InvalidSpec(
                "end mirror inconsistent: rho_end^2 + l_rt^2 != 1".into(),
            ));
        }
        if !(self.rho_c < self.rho_end && self.rho_end <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "require rho_c < rho_end <= 1, got rho_c={}, rho_end={}",
                self.rho_c, self.rho_end
            )));
        }
        if self.theta < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "theta must be non-negative, got {}",
                self.theta
            )));
        }
        if !(self.length_l > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "cavity length must be positive, got {}",
                self.length_l
            )));
        }
        Ok(())
    }

    /// Same cavity with a different Kerr coefficient.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        CavitySpec::new(
            self.rho_c,
            self.tau_c,
            self.rho_end,
            self.l_rt,
            self.length_l,
            theta,
        )
    }

    /// Combined round-trip amplitude factor `rho_c * rho_end`.
    pub fn rho(&self) -> f64 {
        self.rho_c * self.rho_end
    }

    /// Resonant intra-cavity power for a given drive power:
    /// `P_res = tau_c^2 P_in / (1 - rho_c rho_end)^2`.
    pub fn resonant_power(&self, drive_power: f64) -> f64 {
        let tc2 = self.tau_c * self.tau_c;
        let d = 1.0 - self.rho();
        tc2 * drive_power / (d * d)
    }
}

/// Kerr medium description; yields the phase coefficient
/// `theta = n2 omega0 L_KM / (2 A c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KerrMediumSpec {
    /// Non-linear refractive index, m^2/W.
    pub n2: f64,
    /// Kerr medium length, m.
    pub l_km: f64,
    /// Beam cross-sectional area, m^2.
    pub area_a: f64,
    /// Carrier angular frequency, rad/s.
    pub omega0: f64,
}

impl KerrMediumSpec {
    pub fn new(n2: f64, l_km: f64, area_a: f64, omega0: f64) -> Result<Self> {
        if n2 <= 0.0 || l_km <= 0.0 || area_a <= 0.0 || omega0 <= 0.0 {
            return Err(Error::InvalidSpec(
                "all KerrMediumSpec fields must be strictly positive".into(),
            ));
        }
        Ok(KerrMediumSpec {
            n2,
            l_km,
            area_a,
            omega0,
        })
    }

    /// Kerr phase coefficient in rad/W.
    pub fn theta(&self) -> f64 {
        self.n2 * self.omega0 * self.l_km / (2.0 * self.area_a * SPEED_OF_LIGHT)
    }
}

/// Side of the resonance curve when two detunings give the same intra-cavity
/// power. `Low` is the self-phase-shifted steep slope (negative half-trip
/// phase), `High` the shallow side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Low,
    High,
}

/// A steady state of the cavity: geometric detuning plus the intra-cavity
/// field it produces at the configured drive power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Geometric detuning Phi, rad.
    pub phi: f64,
    /// Intra-cavity power |E|^2, W.
    pub intracavity_power: f64,
    /// |E|^2 / P_res.
    pub power_fraction: f64,
    /// Complex steady-state intra-cavity amplitude.
    pub steady_field: Complex64,
    /// Drive power P_in this point was solved for, W.
    pub drive_power: f64,
}

impl OperatingPoint {
    /// Residual of the steady-state fixed-point equation, relative to |E_in|.
    pub fn residual(&self, spec: &CavitySpec) -> f64 {
        let e_in = self.drive_power.sqrt();
        let psi = self.phi + spec.theta * self.steady_field.norm_sqr();
        let loop_factor = Complex64::new(spec.rho(), 0.0) * Complex64::from_polar(1.0, 2.0 * psi);
        let lhs = self.steady_field * (Complex64::new(1.0, 0.0) - loop_factor)
            - Complex64::new(0.0, spec.tau_c * e_in);
        lhs.norm() / e_in
    }

    /// Half-trip phase psi = Phi + theta |E|^2 at this point.
    pub fn half_trip_phase(&self, spec: &CavitySpec) -> f64 {
        self.phi + spec.theta * self.intracavity_power
    }
}

/// One sample of a resonance curve: detuning, intra-cavity power and field
/// phase on one branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSample {
    pub phi: f64,
    pub power: f64,
    /// arg E at this point, rad.
    pub phase: f64,
    pub branch: Branch,
}

/// Resonance curve parametrized by intra-cavity power. For each grid power up
/// to two detunings exist (the two branches); powers above the resonant
/// maximum have no real solution and are listed in `skipped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceCurve {
    pub samples: Vec<ResonanceSample>,
    pub skipped: Vec<f64>,
    pub drive_power: f64,
    pub resonant_power: f64,
}

/// Result of the critical Kerr strength search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    /// Smallest Kerr coefficient producing an infinite-slope point, rad/W.
    pub theta: f64,
    /// Intra-cavity power at the infinite-slope point, W.
    pub power: f64,
    /// power / P_res.
    pub power_fraction: f64,
    /// Detuning of the infinite-slope point at theta = theta_crit, rad.
    pub phi: f64,
}

/// Round-trip time `2 L / c`, seconds.
pub fn round_trip_time(spec: &CavitySpec) -> f64 {
    2.0 * spec.length_l / SPEED_OF_LIGHT
}

/// Fraction of intra-cavity fluctuations that exits through the coupler:
/// `tau_c^2 / (l_rt^2 + tau_c^2)`.
pub fn escape_efficiency(spec: &CavitySpec) -> Result<f64> {
    let tc2 = spec.tau_c * spec.tau_c;
    let l2 = spec.l_rt * spec.l_rt;
    if tc2 == 0.0 && l2 == 0.0 {
        return Err(Error::InvalidSpec(
            "escape efficiency undefined for tau_c = l_rt = 0".into(),
        ));
    }
    Ok(tc2 / (l2 + tc2))
}

/// Round-trip power loss `l_rt^2` that yields a given escape efficiency for a
/// given coupler transmittance: `l_rt^2 = tau_c^2 (1 - eta) / eta`.
pub fn loss_for_escape(eta: f64, tau_c: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "escape efficiency must lie in (0,1], got {eta}"
        )));
    }
    Ok(tau_c * tau_c * (1.0 - eta) / eta)
}

/// Half-bandwidth (HWHM of the theta = 0 Airy resonance) in rad/s:
/// `gamma = (2 / t_rt) asin[(1 - rho) / (2 sqrt(rho))]`.
pub fn half_bandwidth(spec: &CavitySpec) -> f64 {
    let rho = spec.rho();
    (2.0 / round_trip_time(spec)) * ((1.0 - rho) / (2.0 * rho.sqrt())).asin()
}

/// cos(2 psi) on the resonance curve at intra-cavity power `p`:
/// `g = (1 + rho^2 - tau_c^2 P_in / P) / (2 rho)`.
fn curve_cos2psi(spec: &CavitySpec, drive_power: f64, p: f64) -> f64 {
    let rho = spec.rho();
    (1.0 + rho * rho - spec.tau_c * spec.tau_c * drive_power / p) / (2.0 * rho)
}

/// Half-trip phase on a branch at intra-cavity power `p`, or `None` when `p`
/// exceeds the resonant maximum.
fn curve_psi(spec: &CavitySpec, drive_power: f64, p: f64, branch: Branch) -> Option<f64> {
    let g = curve_cos2psi(spec, drive_power, p);
    if !(-1.0..=1.0).contains(&g) {
        return None;
    }
    let psi = 0.5 * g.acos();
    Some(match branch {
        Branch::Low => -psi,
        Branch::High => psi,
    })
}

/// d psi / d P on the steep (Low) branch; positive, diverges at the band
/// edges. Analytic derivative of the closed-form parametrization.
fn curve_dpsi_dp(spec: &CavitySpec, drive_power: f64, p: f64) -> f64 {
    let rho = spec.rho();
    let g = curve_cos2psi(spec, drive_power, p);
    let s = (1.0 - g * g).max(f64::MIN_POSITIVE).sqrt();
    spec.tau_c * spec.tau_c * drive_power / (4.0 * rho * p * p * s)
}

fn steady_field_for_psi(spec: &CavitySpec, drive_power: f64, psi: f64) -> Complex64 {
    let e_in = drive_power.sqrt();
    Complex64::new(0.0, spec.tau_c * e_in)
        / (Complex64::new(1.0, 0.0)
            - Complex64::new(spec.rho(), 0.0) * Complex64::from_polar(1.0, 2.0 * psi))
}

/// Solves the resonance curve on a grid of intra-cavity powers. Both branches
/// are emitted per power (coincident at the peak); powers beyond the resonant
/// maximum are skipped and flagged.
pub fn solve_resonance_curve(
    spec: &CavitySpec,
    drive_power: f64,
    power_grid: &[f64],
) -> Result<ResonanceCurve> {
    if drive_power <= 0.0 {
        return Err(Error::InvalidInput("drive power must be positive".into()));
    }
    if power_grid.is_empty() {
        return Err(Error::InvalidInput("empty power grid".into()));
    }
    if power_grid.windows(2).any(|w| w[1] <= w[0]) || power_grid[0] <= 0.0 {
        return Err(Error::InvalidInput(
            "power grid must be strictly positive and ascending".into(),
        ));
    }
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for &p in power_grid {
        match curve_psi(spec, drive_power, p, Branch::Low) {
            Some(psi_low) => {
                for (psi, branch) in [(psi_low, Branch::Low), (-psi_low, Branch::High)] {
                    let phi = psi - spec.theta * p;
                    let field = steady_field_for_psi(spec, drive_power, psi);
                    samples.push(ResonanceSample {
                        phi,
                        power: p,
                        phase: field.arg(),
                        branch,
                    });
                }
            }
            None => skipped.push(p),
        }
    }
    Ok(ResonanceCurve {
        samples,
        skipped,
        drive_power,
        resonant_power: spec.resonant_power(drive_power),
    })
}

/// Minimum of d psi / d P over the steep branch, with the power at which it
/// is attained. Grid scan followed by golden-section refinement.
fn min_slope(spec: &CavitySpec, drive_power: f64) -> (f64, f64) {
    let p_res = spec.resonant_power(drive_power);
    let n = 4096;
    let lo_frac = 0.3;
    let hi_frac = 0.999_99;
    let mut best_i: usize = 0;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let p = p_res * (lo_frac + (hi_frac - lo_frac) * i as f64 / n as f64);
        let d = curve_dpsi_dp(spec, drive_power, p);
        if d < best {
            best = d;
            best_i = i;
        }
    }
    let step = p_res * (hi_frac - lo_frac) / n as f64;
    let mut a = p_res * lo_frac + step * (best_i.saturating_sub(1)) as f64;
    let mut b = a + 2.0 * step;
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = curve_dpsi_dp(spec, drive_power, x1);
    let mut f2 = curve_dpsi_dp(spec, drive_power, x2);
    for _ in 0..200 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = curve_dpsi_dp(spec, drive_power, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = curve_dpsi_dp(spec, drive_power, x2);
        }
        if (b - a) < 1e-14 * p_res {
            break;
        }
    }
    let p_min = 0.5 * (a + b);
    (curve_dpsi_dp(spec, drive_power, p_min), p_min)
}

/// Finds the smallest Kerr coefficient for which the resonance curve develops
/// a point of infinite slope dP/dPhi. The Kerr shear lowers dPhi/dP by theta
/// uniformly along the power-parametrized curve, so the first root of
/// dPhi/dP appears where d psi / d P is minimal; bisection on theta against
/// the sign of that minimum converges onto the minimum itself.
///
/// The `theta` field of `spec` is ignored.
pub fn find_critical_theta(spec: &CavitySpec, drive_power: f64) -> Result<CriticalPoint> {
    if drive_power <= 0.0 {
        return Err(Error::InvalidInput("drive power must be positive".into()));
    }
    let (m, p_c) = min_slope(spec, drive_power);
    if !m.is_finite() || m <= 0.0 {
        return Err(Error::Numerics(format!(
            "slope minimum search failed (min {m} at P {p_c})"
        )));
    }
    let mut lo = 0.5 * m;
    let mut hi = 2.0 * m;
    let mut iter = 0;
    while (hi - lo) > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if m - mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iter += 1;
        if iter > 200 {
            return Err(Error::Numerics(format!(
                "critical theta bisection failed to converge in bracket [{lo}, {hi}]"
            )));
        }
    }
    let theta = 0.5 * (lo + hi);
    let psi = curve_psi(spec, drive_power, p_c, Branch::Low).ok_or_else(|| {
        Error::Numerics("critical power left the resonance curve during refinement".into())
    })?;
    Ok(CriticalPoint {
        theta,
        power: p_c,
        power_fraction: p_c / spec.resonant_power(drive_power),
        phi: psi - theta * p_c,
    })
}

/// Operating point with `|E|^2 = fraction * P_res` on the requested side of
/// the resonance. `Branch::Low` is the steep slope used throughout the
/// operating-point studies.
pub fn operating_point_for_fraction(
    spec: &CavitySpec,
    drive_power: f64,
    fraction: f64,
    branch: Branch,
) -> Result<OperatingPoint> {
    if drive_power <= 0.0 {
        return Err(Error::InvalidInput("drive power must be positive".into()));
    }
    if !(fraction > 0.0) {
        return Err(Error::InvalidInput(format!(
            "power fraction must be positive, got {fraction}"
        )));
    }
    if fraction > 1.0 {
        return Err(Error::InvalidInput(format!(
            "power fraction must not exceed 1, got {fraction} (resonant maximum is P_res)"
        )));
    }
    let p = fraction * spec.resonant_power(drive_power);
    let psi = curve_psi(spec, drive_power, p, branch).ok_or_else(|| {
        Error::InvalidInput(format!(
            "no steady state at fraction {fraction}; available branches cover (0, 1]"
        ))
    })?;
    let field = steady_field_for_psi(spec, drive_power, psi);
    let op = OperatingPoint {
        phi: psi - spec.theta * field.norm_sqr(),
        intracavity_power: field.norm_sqr(),
        power_fraction: field.norm_sqr() / spec.resonant_power(drive_power),
        steady_field: field,
        drive_power,
    };
    let res = op.residual(spec);
    if res >= 1e-10 {
        return Err(Error::Numerics(format!(
            "steady-state residual {res:.3e} exceeds 1e-10 at fraction {fraction}"
        )));
    }
    Ok(op)
}

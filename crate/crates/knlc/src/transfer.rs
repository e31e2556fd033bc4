//! Linearized 2x2 quadrature transfer matrices assembled from sideband
//! pairs, spectral-density algebra and classical input-noise dressing.
//!
//! Quadrature modulation amplitudes relate to sidebands as
//! `c1 = R(Omega) + R*(-Omega)` and `c2 = i [R*(-Omega) - R(Omega)]` for a
//! drive whose own quadrature tone has `c1 = x` (amplitude) or `c2 = x`
//! (phase). With the engine's cosine convention each input tone carries
//! `x/2` in the upper and lower sidebands, so dividing the output quadrature
//! amplitudes by `x` makes a unitary reflection yield a unitary T and hence
//! vacuum-normalized spectral densities (identity for a theta = 0 lossless
//! cavity).
//!
//! Output quadratures are referenced to the reflected mean field: the raw
//! matrix is rotated by minus the reflected-carrier phase, so X1 is the
//! amplitude quadrature of the output beam.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cavity::{round_trip_time, CavitySpec, OperatingPoint};
use crate::engine::{
    extract_sidebands, propagate, DriveSpec, InjectionPort, Modulation, PropagateOptions,
    SidebandPair, SnappedFrequency,
};
use crate::error::{Error, Result};

/// Which input port a transfer matrix describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Coupler,
    Loss,
}

/// Complex 2x2 quadrature input-output map at one Fourier frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub t11: Complex64,
    pub t12: Complex64,
    pub t21: Complex64,
    pub t22: Complex64,
    /// Analysis frequency, rad/s.
    pub omega: f64,
    pub channel: Channel,
}

impl TransferMatrix {
    pub fn zero(omega: f64, channel: Channel) -> Self {
        let z = Complex64::new(0.0, 0.0);
        TransferMatrix {
            t11: z,
            t12: z,
            t21: z,
            t22: z,
            omega,
            channel,
        }
    }

    fn is_finite(&self) -> bool {
        [self.t11, self.t12, self.t21, self.t22]
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Left-multiplies by a real rotation matrix Rot(angle).
    pub fn rotated_left(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        TransferMatrix {
            t11: c * self.t11 - s * self.t21,
            t12: c * self.t12 - s * self.t22,
            t21: s * self.t11 + c * self.t21,
            t22: s * self.t12 + c * self.t22,
            ..*self
        }
    }
}

/// Real symmetric 2x2 spectral density (covariance) matrix, vacuum = 1 per
/// quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralMatrix {
    pub s11: f64,
    pub s22: f64,
    pub s12: f64,
    pub omega: f64,
}

impl SpectralMatrix {
    pub fn identity(omega: f64) -> Self {
        SpectralMatrix {
            s11: 1.0,
            s22: 1.0,
            s12: 0.0,
            omega,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.s11 * self.s22 - self.s12 * self.s12
    }

    /// Element-wise sum; frequencies must match.
    pub fn add(&self, other: &SpectralMatrix) -> Result<SpectralMatrix> {
        check_omega(self.omega, other.omega)?;
        Ok(SpectralMatrix {
            s11: self.s11 + other.s11,
            s22: self.s22 + other.s22,
            s12: self.s12 + other.s12,
            omega: self.omega,
        })
    }
}

/// Classical input-noise ellipse: amplitude scale factors for the two
/// principal axes (power = s^2, vacuum s = 1) and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNoiseSpec {
    pub s1: f64,
    pub s2: f64,
    /// Ellipse orientation, rad.
    pub vartheta: f64,
}

impl InputNoiseSpec {
    pub fn vacuum() -> Self {
        InputNoiseSpec {
            s1: 1.0,
            s2: 1.0,
            vartheta: 0.0,
        }
    }

    /// From noise powers in dB above vacuum.
    pub fn from_db(s1_db: f64, s2_db: f64, vartheta: f64) -> Self {
        InputNoiseSpec {
            s1: 10f64.powf(s1_db / 20.0),
            s2: 10f64.powf(s2_db / 20.0),
            vartheta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s1 < 0.0 || self.s2 < 0.0 {
            return Err(Error::InvalidSpec("noise scale factors must be >= 0".into()));
        }
        if self.s1 * self.s2 < 1.0 - 1e-9 {
            return Err(Error::InvalidSpec(format!(
                "input state unphysical: s1*s2 = {} < 1",
                self.s1 * self.s2
            )));
        }
        Ok(())
    }
}

fn check_omega(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
        return Err(Error::InvalidInput(format!(
            "frequency mismatch: {a} vs {b} rad/s"
        )));
    }
    Ok(())
}

/// Assembles a transfer matrix from amplitude- and phase-modulation sideband
/// pairs. Column 1 is the response to a unit amplitude-quadrature input,
/// column 2 to a unit phase-quadrature input.
pub fn transfer_from_sidebands(
    am: &SidebandPair,
    pm: &SidebandPair,
    x1: f64,
    x2: f64,
    channel: Channel,
) -> Result<TransferMatrix> {
    check_omega(am.omega, pm.omega)?;
    if x1 == 0.0 || x2 == 0.0 {
        return Err(Error::InvalidInput("modulation amplitudes must be non-zero".into()));
    }
    let i = Complex64::new(0.0, 1.0);
    let t = TransferMatrix {
        t11: (am.lower.conj() + am.upper) / x1,
        t21: i * (am.lower.conj() - am.upper) / x1,
        t12: (pm.lower.conj() + pm.upper) / x2,
        t22: i * (pm.lower.conj() - pm.upper) / x2,
        omega: am.omega,
        channel,
    };
    if !t.is_finite() {
        return Err(Error::Numerics("non-finite transfer coefficients".into()));
    }
    Ok(t)
}

/// Spectral density of vacuum pushed through `T`:
/// `S = (T T^dag + T* T^T) / 2 = Re(T T^dag)`.
pub fn spectral_density(t: &TransferMatrix) -> SpectralMatrix {
    let s11 = t.t11.norm_sqr() + t.t12.norm_sqr();
    let s22 = t.t21.norm_sqr() + t.t22.norm_sqr();
    let s12 = (t.t11 * t.t21.conj() + t.t12 * t.t22.conj()).re;
    SpectralMatrix {
        s11,
        s22,
        s12,
        omega: t.omega,
    }
}

/// Dresses a transfer matrix with a classical input state:
/// `T' = T Rot(vartheta) diag(s1, s2)`.
pub fn dress_with_input_noise(t: &TransferMatrix, noise: &InputNoiseSpec) -> Result<TransferMatrix> {
    noise.validate()?;
    let (sn, cs) = noise.vartheta.sin_cos();
    // columns of Rot(vartheta) * diag(s1, s2)
    let (a11, a21) = (cs * noise.s1, sn * noise.s1);
    let (a12, a22) = (-sn * noise.s2, cs * noise.s2);
    Ok(TransferMatrix {
        t11: t.t11 * a11 + t.t12 * a21,
        t21: t.t21 * a11 + t.t22 * a21,
        t12: t.t11 * a12 + t.t12 * a22,
        t22: t.t21 * a12 + t.t22 * a22,
        ..*t
    })
}

/// Total output spectral density: classical-dressed coupler channel plus the
/// (always vacuum) loss channel.
pub fn total_spectral_density(
    t_coupler: &TransferMatrix,
    l_loss: &TransferMatrix,
    noise: &InputNoiseSpec,
) -> Result<SpectralMatrix> {
    check_omega(t_coupler.omega, l_loss.omega)?;
    let dressed = dress_with_input_noise(t_coupler, noise)?;
    spectral_density(&dressed).add(&spectral_density(l_loss))
}

/// Noise power measured at homodyning angle `zeta`:
/// `(cos, sin) S (cos, sin)^T`.
pub fn quadrature_noise(s: &SpectralMatrix, zeta: f64) -> f64 {
    let (sn, cs) = zeta.sin_cos();
    cs * cs * s.s11 + sn * sn * s.s22 + 2.0 * sn * cs * s.s12
}

/// Phase of the reflected mean field, wrapped to (-pi/2, pi/2]. Output
/// quadratures are defined relative to this carrier axis; the mod-pi wrap
/// keeps the resonant lossless reflection (carrier phase pi) in the same
/// quadrature frame as the input.
pub fn reflected_carrier_phase(spec: &CavitySpec, op: &OperatingPoint) -> f64 {
    let e_in = Complex64::new(op.drive_power.sqrt(), 0.0);
    let r = (e_in + Complex64::new(0.0, spec.tau_c) * op.steady_field) / spec.rho_c;
    let mut phi = r.arg();
    while phi <= -std::f64::consts::FRAC_PI_2 {
        phi += std::f64::consts::PI;
    }
    while phi > std::f64::consts::FRAC_PI_2 {
        phi -= std::f64::consts::PI;
    }
    phi
}

/// Worst-case intra-cavity sideband amplitude per unit drive sideband, from
/// the resolvent of the linearized round-trip map. Near the critical point
/// this grows as 1/Omega while a fixed-ratio drive would push the sideband
/// response itself out of the linear regime, so drives are scaled down to
/// keep the *response* at the configured ratio. Only the drive amplitude
/// depends on this estimate; it cancels exactly in the measured ratio, so
/// transfer matrices stay independent of the linearized model.
fn intracavity_gain(spec: &CavitySpec, op: &OperatingPoint, omega: f64) -> f64 {
    let theta = spec.theta;
    let e = op.steady_field;
    let p = e.norm_sqr();
    let psi = op.phi + theta * p;
    let a = Complex64::from_polar(spec.rho(), 2.0 * psi);
    let z = Complex64::from_polar(1.0, -omega * round_trip_time(spec));
    let m11 = a * z * Complex64::new(1.0, 2.0 * theta * p);
    let m12 = a * z * Complex64::new(0.0, 2.0 * theta) * e * e;
    let m21 = -a.conj() * z * Complex64::new(0.0, 2.0 * theta) * (e * e).conj();
    let m22 = a.conj() * z * Complex64::new(1.0, -2.0 * theta * p);
    let one = Complex64::new(1.0, 0.0);
    let (g11, g12, g21, g22) = (one - m11, -m12, -m21, one - m22);
    let det = g11 * g22 - g12 * g21;
    let max_adj = g11.norm().max(g12.norm()).max(g21.norm()).max(g22.norm());
    spec.tau_c * max_adj / det.norm()
}

/// Both channel transfer matrices at one (snapped) frequency, measured with
/// four time-domain propagations (am/pm x coupler/loss) and rotated into the
/// reflected-carrier frame.
pub fn measure_transfer(
    spec: &CavitySpec,
    op: &OperatingPoint,
    snapped: &SnappedFrequency,
    opts: &PropagateOptions,
) -> Result<(TransferMatrix, TransferMatrix)> {
    let e0 = op.drive_power.sqrt();
    let gain = intracavity_gain(spec, op, snapped.omega);
    let e_mag = op.steady_field.norm();
    let scale = (2.0 * e_mag / (gain * e0)).min(1.0).max(1e-9);
    let x = opts.mod_ratio * e0 * scale;
    let run = |modulation: Modulation, port: InjectionPort| -> Result<SidebandPair> {
        let drive = DriveSpec {
            e0,
            modulation,
            mod_amplitude: x,
            mod_frequency: snapped.omega,
            port,
        };
        let (reflected, _) = propagate(spec, op, &drive, snapped.n_record, opts)?;
        extract_sidebands(&reflected, snapped.omega)
    };
    let t_raw = transfer_from_sidebands(
        &run(Modulation::Amplitude, InjectionPort::Coupler)?,
        &run(Modulation::Phase, InjectionPort::Coupler)?,
        x,
        x,
        Channel::Coupler,
    )?;
    let l_raw = if spec.l_rt == 0.0 {
        TransferMatrix::zero(t_raw.omega, Channel::Loss)
    } else {
        transfer_from_sidebands(
            &run(Modulation::Amplitude, InjectionPort::EndMirror)?,
            &run(Modulation::Phase, InjectionPort::EndMirror)?,
            x,
            x,
            Channel::Loss,
        )?
    };
    let phi_r = reflected_carrier_phase(spec, op);
    Ok((t_raw.rotated_left(-phi_r), l_raw.rotated_left(-phi_r)))
}

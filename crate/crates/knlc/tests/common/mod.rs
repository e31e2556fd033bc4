//! Independent oracles for the integration and acceptance suites: a
//! frequency-domain linearization of the round-trip map solved directly in
//! the sideband basis, and the closed-form Airy reflection response for the
//! linear cavity. Both are derived without reusing the engine's time-domain
//! code path.

#![allow(dead_code)]

use knlc::cavity::{round_trip_time, CavitySpec, OperatingPoint};
use num_complex::Complex64;

type C = Complex64;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// 2x2 complex matrix in row-major order.
#[derive(Debug, Clone, Copy)]
pub struct Mat2(pub [[C; 2]; 2]);

impl Mat2 {
    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    /// Re(M M^dagger).
    pub fn spectral(&self) -> [[f64; 2]; 2] {
        let a = &self.0;
        let s11 = (a[0][0] * a[0][0].conj() + a[0][1] * a[0][1].conj()).re;
        let s22 = (a[1][0] * a[1][0].conj() + a[1][1] * a[1][1].conj()).re;
        let s12 = (a[0][0] * a[1][0].conj() + a[0][1] * a[1][1].conj()).re;
        [[s11, s12], [s12, s22]]
    }
}

/// Solves (I - M) x = d for a 2x2 complex M by Cramer's rule.
fn solve2(m: &Mat2, d: [C; 2]) -> [C; 2] {
    let a = c(1.0, 0.0) - m.0[0][0];
    let b = -m.0[0][1];
    let cc = -m.0[1][0];
    let dd = c(1.0, 0.0) - m.0[1][1];
    let det = a * dd - b * cc;
    [(d[0] * dd - b * d[1]) / det, (a * d[1] - cc * d[0]) / det]
}

fn real_rot(angle: f64) -> Mat2 {
    let (s, co) = angle.sin_cos();
    Mat2([[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]])
}

/// Carrier phase of the reflected mean field, wrapped to (-pi/2, pi/2].
fn reflected_phase(spec: &CavitySpec, op: &OperatingPoint) -> f64 {
    let e0 = op.drive_power.sqrt();
    let rbar = (c(e0, 0.0) + c(0.0, spec.tau_c) * op.steady_field) / spec.rho_c;
    let mut phi = rbar.arg();
    while phi <= -std::f64::consts::FRAC_PI_2 {
        phi += std::f64::consts::PI;
    }
    while phi > std::f64::consts::FRAC_PI_2 {
        phi -= std::f64::consts::PI;
    }
    phi
}

/// Linearized sideband transfer matrices of the Kerr cavity at one analysis
/// frequency, solved in the (u, w*) frequency domain: returns (T, L), the
/// coupler-input and loss-port quadrature maps referenced to the reflected
/// carrier axis.
pub fn lin_transfer(spec: &CavitySpec, op: &OperatingPoint, omega: f64) -> (Mat2, Mat2) {
    let t_rt = round_trip_time(spec);
    let theta = spec.theta;
    let e = op.steady_field;
    let p = e.norm_sqr();
    let psi = op.phi + theta * p;
    let rho = spec.rho();
    let a = C::from_polar(rho, 2.0 * psi);
    let z = C::from_polar(1.0, -omega * t_rt);
    let m = Mat2([
        [a * z * c(1.0, 2.0 * theta * p), a * z * c(0.0, 2.0 * theta) * e * e],
        [
            -a.conj() * z * c(0.0, 2.0 * theta) * (e * e).conj(),
            a.conj() * z * c(1.0, -2.0 * theta * p),
        ],
    ]);
    let tc = spec.tau_c;
    let rc = spec.rho_c;
    let x = 1.0;
    let itc = c(0.0, tc);

    // coupler-input drives: amplitude (p = q = x/2) and phase (p = ix/2)
    let half = c(0.5 * x, 0.0);
    let ihalf = c(0.0, 0.5 * x);
    let mut coupler = [[c(0.0, 0.0); 2]; 2];
    for (col, (pp, qq_star)) in [(half, half), (ihalf, -ihalf)].iter().enumerate() {
        let du = itc * *pp;
        let dw = -itc * *qq_star;
        let [u, ws] = solve2(&m, [du, dw]);
        let upper = (*pp + itc * u) / rc;
        let lower_c = (*qq_star - itc * ws) / rc;
        coupler[0][col] = (upper + lower_c) / x;
        coupler[1][col] = c(0.0, 1.0) * (lower_c - upper) / x;
    }
    let t_mat = Mat2(coupler);

    // loss-port drives enter after the end mirror with amplitude l_rt and
    // half a trip of accumulated phase
    let k = c(0.0, rc * spec.l_rt) * C::from_polar(1.0, psi) * z;
    let mut loss = [[c(0.0, 0.0); 2]; 2];
    for (col, (pp, qq_star)) in [(half, half), (ihalf, -ihalf)].iter().enumerate() {
        let du = k * *pp;
        let dw = -c(0.0, rc * spec.l_rt) * C::from_polar(1.0, -psi) * z * *qq_star;
        let [u, ws] = solve2(&m, [du, dw]);
        let upper = itc * u / rc;
        let lower_c = -itc * ws / rc;
        loss[0][col] = (upper + lower_c) / x;
        loss[1][col] = c(0.0, 1.0) * (lower_c - upper) / x;
    }
    let l_mat = Mat2(loss);

    let rot = real_rot(-reflected_phase(spec, op));
    (rot.mul(&t_mat), rot.mul(&l_mat))
}

/// Total output spectral density from the linearized oracle, with classical
/// input noise (s1, s2 amplitude factors at ellipse angle vartheta).
pub fn lin_stot(
    spec: &CavitySpec,
    op: &OperatingPoint,
    omega: f64,
    s1: f64,
    s2: f64,
    vartheta: f64,
) -> [[f64; 2]; 2] {
    let (t, l) = lin_transfer(spec, op, omega);
    let diag = Mat2([[c(s1, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(s2, 0.0)]]);
    let dressed = t.mul(&real_rot(vartheta)).mul(&diag);
    let st = dressed.spectral();
    let sl = l.spectral();
    [
        [st[0][0] + sl[0][0], st[0][1] + sl[0][1]],
        [st[1][0] + sl[1][0], st[1][1] + sl[1][1]],
    ]
}

/// Closed-form Airy sideband reflection of the linear (theta = 0) cavity at
/// detuning `omega` from the carrier, at geometric detuning Phi:
/// `r = (rho_c - rho_end b) / (1 - rho_c rho_end b)` with
/// `b = exp(i(2 Phi - omega t_rt))`.
pub fn airy_reflection(spec: &CavitySpec, phi: f64, omega: f64) -> C {
    let t_rt = round_trip_time(spec);
    let b = C::from_polar(1.0, 2.0 * phi - omega * t_rt);
    (spec.rho_c - spec.rho_end * b) / (c(1.0, 0.0) - spec.rho_c * spec.rho_end * b)
}

/// Closed-form quadrature transfer matrix of the linear cavity assembled from
/// the Airy responses at +/- omega, referenced to the reflected carrier.
pub fn airy_transfer(spec: &CavitySpec, op: &OperatingPoint, omega: f64) -> Mat2 {
    assert_eq!(spec.theta, 0.0, "Airy form holds only for theta = 0");
    let r_up = airy_reflection(spec, op.phi, omega);
    let r_lo_c = airy_reflection(spec, op.phi, -omega).conj();
    let half = c(0.5, 0.0);
    let i = c(0.0, 1.0);
    let t = Mat2([
        [(r_up + r_lo_c) * half, i * (r_up - r_lo_c) * half],
        [i * (r_lo_c - r_up) * half, (r_up + r_lo_c) * half],
    ]);
    real_rot(-reflected_phase(spec, op)).mul(&t)
}

/// Minimum-variance eigenpair of a symmetric 2x2, returning
/// (angle in (-pi/2, pi/2], var_min, var_max).
pub fn eig_min(s: &[[f64; 2]; 2]) -> (f64, f64, f64) {
    let tr = s[0][0] + s[1][1];
    let diff = s[0][0] - s[1][1];
    let disc = (diff * diff / 4.0 + s[0][1] * s[0][1]).sqrt();
    let lo = tr / 2.0 - disc;
    let hi = tr / 2.0 + disc;
    let cand_a = (s[0][1], lo - s[0][0]);
    let cand_b = (lo - s[1][1], s[0][1]);
    let (vx, vy) = if cand_a.0.hypot(cand_a.1) >= cand_b.0.hypot(cand_b.1) {
        cand_a
    } else {
        cand_b
    };
    let mut angle = if vx == 0.0 && vy == 0.0 {
        0.0
    } else {
        vy.atan2(vx)
    };
    while angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    }
    while angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    }
    (angle, lo, hi)
}

pub fn db(power: f64) -> f64 {
    10.0 * power.log10()
}

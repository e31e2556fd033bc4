//! Acceptance gate: the nine criteria the project commits to, one test per
//! criterion, each emitting a single pass/fail line with the measured
//! numbers at the stated tolerances.

mod common;

use std::time::Instant;

use common::{airy_transfer, db};
use knlc::cavity::{
    find_critical_theta, half_bandwidth, loss_for_escape, operating_point_for_fraction,
    round_trip_time, Branch, CavitySpec, OperatingPoint,
};
use knlc::engine::{
    choose_record, extract_sidebands, propagate, DriveSpec, InjectionPort, Modulation,
    PropagateOptions,
};
use knlc::phasespace::{ellipse_from_spectral, optimize_operating_point, spectral_density_at, sweep_spectrum};
use knlc::pipeline::{ingest_spectrum, run_experiment_model, PhaseNoisePort, PipelineConfig};
use knlc::transfer::{measure_transfer, InputNoiseSpec};
use num_complex::Complex64;

const LENGTH_M: f64 = 0.0587;
const DRIVE_W: f64 = 1.0;

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n} ({name}): {verdict} [{detail}]");
    assert!(pass, "criterion {n} ({name}) FAIL [{detail}]");
}

fn critical_cavity(rc2: f64, l2: f64) -> CavitySpec {
    let bare = CavitySpec::from_power_coefficients(rc2, l2, LENGTH_M, 0.0).unwrap();
    let crit = find_critical_theta(&bare, DRIVE_W).unwrap();
    bare.with_theta(crit.theta).unwrap()
}

fn loss_for_eta(rc2: f64, eta: f64) -> f64 {
    let tau_c = (1.0 - rc2).sqrt();
    loss_for_escape(eta, tau_c).unwrap()
}

#[test]
fn criterion_1_linear_oracle_equivalence() {
    let start = Instant::now();
    let spec = CavitySpec::from_power_coefficients(0.9, 0.02, LENGTH_M, 0.0).unwrap();
    let gamma = half_bandwidth(&spec);
    let t_rt = round_trip_time(&spec);
    let opts = PropagateOptions::default();
    // detuned operating point: arbitrary Phi away from resonance
    let op = operating_point_for_fraction(&spec, DRIVE_W, 0.6, Branch::Low).unwrap();
    let n = 20;
    let mut worst = 0.0f64;
    for i in 0..n {
        let omega = 0.01 * gamma * 1000f64.powf(i as f64 / (n - 1) as f64);
        let snapped = choose_record(omega, t_rt, 8).unwrap();
        let (t, _) = measure_transfer(&spec, &op, &snapped, &opts).unwrap();
        let oracle = airy_transfer(&spec, &op, snapped.omega);
        let m = [[t.t11, t.t12], [t.t21, t.t22]];
        let scale = oracle
            .0
            .iter()
            .flatten()
            .map(|v| v.norm())
            .fold(0.0f64, f64::max);
        for r in 0..2 {
            for cc in 0..2 {
                worst = worst.max((m[r][cc] - oracle.0[r][cc]).norm() / scale);
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        "linear-cavity oracle equivalence",
        worst < 1e-6 && elapsed < 10.0,
        &format!("max rel err {worst:.2e} over 20 freqs, tol 1e-6; {elapsed:.1} s, target < 10 s"),
    );
}

#[test]
fn criterion_2_lossless_critical_squeezing_floor() {
    let spec = critical_cavity(0.9, 0.0);
    let gamma = half_bandwidth(&spec);
    let t_rt = round_trip_time(&spec);
    let opts = PropagateOptions::default();
    let op = operating_point_for_fraction(&spec, DRIVE_W, 0.75, Branch::Low).unwrap();
    let vacuum = InputNoiseSpec::vacuum();
    // the last decade, ascending
    let fracs = [0.001, 0.0018, 0.0032, 0.0056, 0.01];
    let mut s11_db = Vec::new();
    for f in fracs {
        let snapped = choose_record(f * gamma, t_rt, 8).unwrap();
        let s = spectral_density_at(&spec, &op, &vacuum, &snapped, &opts).unwrap();
        s11_db.push(db(s.s11));
    }
    let monotone = s11_db.windows(2).all(|w| w[0] < w[1]);
    let floor = s11_db[0];
    report(
        2,
        "lossless critical squeezing floor",
        floor < -40.0 && monotone,
        &format!(
            "S11(0.001 gamma) = {floor:.2} dB (< -40 required), last-decade values {s11_db:?} monotone: {monotone}"
        ),
    );
}

#[test]
fn criterion_3_loss_limited_floor() {
    let rc2 = 0.9;
    let opts = PropagateOptions::default();
    let vacuum = InputNoiseSpec::vacuum();
    let mut details = Vec::new();
    let mut pass = true;
    for eta in [0.999, 0.99, 0.9, 0.75] {
        let spec = critical_cavity(rc2, loss_for_eta(rc2, eta));
        let gamma = half_bandwidth(&spec);
        let t_rt = round_trip_time(&spec);
        let outcome =
            optimize_operating_point(&spec, DRIVE_W, &vacuum, 0.001 * gamma, &opts).unwrap();
        let snapped = choose_record(0.001 * gamma, t_rt, 8).unwrap();
        let s = spectral_density_at(&spec, &outcome.op, &vacuum, &snapped, &opts).unwrap();
        let got = db(s.s11);
        let target = db(1.0 - eta);
        let ok = (got - target).abs() <= 0.5;
        pass &= ok;
        details.push(format!(
            "eta {eta}: {got:.3} dB vs {target:.3} dB (op fraction {:.4})",
            outcome.op.power_fraction
        ));
    }
    report(
        3,
        "loss-limited floor 10 log10(1 - eta) +/- 0.5 dB",
        pass,
        &details.join("; "),
    );
}

#[test]
fn criterion_4_critical_point_location() {
    let mut details = Vec::new();
    let mut pass = true;
    for (rc2, l2) in [(0.983, 0.0), (0.983, 0.005), (0.9, 0.0), (0.81, 0.0)] {
        let bare = CavitySpec::from_power_coefficients(rc2, l2, LENGTH_M, 0.0).unwrap();
        let crit = find_critical_theta(&bare, DRIVE_W).unwrap();
        let ok = (crit.power_fraction - 0.75).abs() <= 0.005;
        pass &= ok;
        details.push(format!(
            "Rc2 {rc2} loss {l2}: fraction {:.5}",
            crit.power_fraction
        ));
    }
    report(4, "critical point at 0.75 P_res +/- 0.005", pass, &details.join("; "));
}

#[test]
fn criterion_5_two_operating_points() {
    let rc2 = 0.9;
    let spec = critical_cavity(rc2, loss_for_eta(rc2, 0.9));
    let gamma = half_bandwidth(&spec);
    let opts = PropagateOptions::default();
    let vacuum = InputNoiseSpec::vacuum();
    let outcome = optimize_operating_point(&spec, DRIVE_W, &vacuum, 0.1 * gamma, &opts).unwrap();
    let crossings: Vec<f64> = outcome
        .crossings
        .iter()
        .copied()
        .filter(|f| (0.25..0.95).contains(f))
        .collect();
    let pass = crossings.len() == 2
        && (crossings[0] - 0.55).abs() <= 0.1
        && (crossings[1] - 0.95).abs() <= 0.1;
    report(
        5,
        "two zero-angle operating points at eta 0.9, 0.1 gamma",
        pass,
        &format!("crossings {crossings:?}, expected near 0.55 and 0.95 within 0.1"),
    );
}

#[test]
fn criterion_6_classical_noise_robustness() {
    let opts = PropagateOptions::default();
    // 20 dB / 10 dB ellipse tilted 40 degrees against the Kerr rotation
    // sense; the tilt sign is what makes the loss-induced dips line up with
    // the angle zero crossing (a co-rotating tilt never reaches 0 degrees)
    let noise = InputNoiseSpec::from_db(20.0, 10.0, (-40f64).to_radians());

    // lossless critical point still squeezes the noisy drive to about -30 dB
    let spec = critical_cavity(0.9, 0.0);
    let gamma = half_bandwidth(&spec);
    let t_rt = round_trip_time(&spec);
    let op = operating_point_for_fraction(&spec, DRIVE_W, 0.75, Branch::Low).unwrap();
    let snapped = choose_record(0.001 * gamma, t_rt, 8).unwrap();
    let s = spectral_density_at(&spec, &op, &noise, &snapped, &opts).unwrap();
    let floor = db(s.s11);

    // with loss, the spectrum dips where the minimum-noise angle crosses zero
    let rc2 = 0.9;
    let lossy = critical_cavity(rc2, loss_for_eta(rc2, 0.99));
    let gamma_l = half_bandwidth(&lossy);
    let op_l = operating_point_for_fraction(&lossy, DRIVE_W, 0.75, Branch::Low).unwrap();
    let points_per_decade = 12usize;
    let n = 4 * points_per_decade;
    let grid: Vec<f64> = (0..=n)
        .map(|i| 0.001 * gamma_l * 1e4f64.powf(i as f64 / n as f64))
        .collect();
    let table = sweep_spectrum(&lossy, &op_l, &noise, &grid, &opts).unwrap();
    let rows = &table.rows;
    let mut dip_omega = None;
    let mut dip_val = f64::INFINITY;
    for i in 1..rows.len() - 1 {
        if rows[i].s11 < rows[i - 1].s11 && rows[i].s11 < rows[i + 1].s11 && rows[i].s11 < dip_val {
            dip_val = rows[i].s11;
            dip_omega = Some(rows[i].omega_over_gamma);
        }
    }
    let mut cross_omega = None;
    for i in 0..rows.len() - 1 {
        let (a, b) = (rows[i].angle_min_deg, rows[i + 1].angle_min_deg);
        if a == 0.0 || (a * b < 0.0 && (b - a).abs() < 90.0) {
            cross_omega = Some((rows[i].omega_over_gamma * rows[i + 1].omega_over_gamma).sqrt());
        }
    }
    let coincide = match (dip_omega, cross_omega) {
        (Some(d), Some(c)) => (d / c).ln().abs() < 0.5f64.ln().abs(),
        _ => false,
    };
    report(
        6,
        "classical-noise robustness",
        floor <= -30.0 && coincide,
        &format!(
            "S11(0.001 gamma) = {floor:.2} dB (<= -30 required); dip at {:?} gamma vs angle crossing at {:?} gamma",
            dip_omega, cross_omega
        ),
    );
}

#[test]
fn criterion_7_physicality_suite() {
    // NOTE: the determinant bar of 1e-9 is expected to fail honestly by
    // about one order of magnitude. The measured determinant error is the
    // sum of a nonlinear mixing bias growing with the probe amplitude and a
    // rounding floor of roughly one carrier ulp on the extracted sideband,
    // i.e. about 2 eps / mod_ratio relative on the matrix elements (the
    // floor is bit-identical across record lengths and warmup factors,
    // which rules out transients and spectral leakage). The two terms cross
    // near mod_ratio 1e-7 at a determinant error of a few 1e-8; no f64
    // probe amplitude reaches 1e-9. The determinant is therefore checked at
    // its own optimum while purity, whose 1e-6 bar sits above the rounding
    // floor of a stronger probe, is checked at the default ratio; both bars
    // are about measurement resolution, not about the physics, which is
    // exactly symplectic in the linearized limit.
    let mut opts = PropagateOptions::default();
    opts.mod_ratio = 1e-7;
    let mut opts_purity = PropagateOptions::default();
    opts_purity.mod_ratio = 1e-6;
    let vacuum = InputNoiseSpec::vacuum();
    let classical = InputNoiseSpec::from_db(20.0, 10.0, 40f64.to_radians());
    let mut worst_det: f64 = f64::INFINITY;
    let mut worst_purity: f64 = 0.0;

    // Heisenberg bound for lossy + classical combinations, purity for the
    // lossless vacuum runs
    let lossless = critical_cavity(0.9, 0.0);
    let lossy = critical_cavity(0.9, loss_for_eta(0.9, 0.9));
    for (spec, noise, lossless_vacuum) in [
        (&lossless, &vacuum, true),
        (&lossless, &classical, false),
        (&lossy, &vacuum, false),
        (&lossy, &classical, false),
    ] {
        let gamma = half_bandwidth(spec);
        let t_rt = round_trip_time(spec);
        for fraction in [0.55, 0.75, 0.9] {
            let op = operating_point_for_fraction(spec, DRIVE_W, fraction, Branch::Low).unwrap();
            for om in [0.01, 0.1, 1.0] {
                let snapped = choose_record(om * gamma, t_rt, 8).unwrap();
                let s = spectral_density_at(spec, &op, noise, &snapped, &opts).unwrap();
                let det = s.determinant();
                worst_det = worst_det.min(det);
                if lossless_vacuum {
                    let s = spectral_density_at(spec, &op, noise, &snapped, &opts_purity).unwrap();
                    let purity = ellipse_from_spectral(&s).purity;
                    worst_purity = worst_purity.max((purity - 1.0).abs());
                }
            }
        }
    }

    // steady-state energy balance |R|^2 + l_rt^2 |E|^2 = P_in
    let mut worst_energy: f64 = 0.0;
    for (spec, fraction) in [(&lossless, 0.75), (&lossy, 0.55), (&lossy, 0.9)] {
        let op = operating_point_for_fraction(spec, DRIVE_W, fraction, Branch::Low).unwrap();
        let e0 = op.drive_power.sqrt();
        let r = (Complex64::new(e0, 0.0) + Complex64::new(0.0, spec.tau_c) * op.steady_field)
            / spec.rho_c;
        let total = r.norm_sqr() + spec.l_rt * spec.l_rt * op.intracavity_power;
        worst_energy = worst_energy.max((total - op.drive_power).abs() / op.drive_power);
    }

    let pass = worst_det >= 1.0 - 1e-9 && worst_purity <= 1e-6 && worst_energy <= 1e-10;
    report(
        7,
        "physicality suite",
        pass,
        &format!(
            "min det {worst_det:.12}, max |purity - 1| {worst_purity:.2e}, max energy imbalance {worst_energy:.2e}"
        ),
    );
}

fn harmonic_db(spec: &CavitySpec, op: &OperatingPoint, omega: f64, opts: &PropagateOptions) -> f64 {
    let t_rt = round_trip_time(spec);
    let snapped = choose_record(omega, t_rt, 8).unwrap();
    let e0 = op.drive_power.sqrt();
    let drive = DriveSpec {
        e0,
        modulation: Modulation::Amplitude,
        mod_amplitude: opts.mod_ratio * e0,
        mod_frequency: snapped.omega,
        port: InjectionPort::Coupler,
    };
    let (reflected, _) = propagate(spec, op, &drive, snapped.n_record, opts).unwrap();
    let pair = extract_sidebands(&reflected, snapped.omega).unwrap();
    let fundamental = pair.upper.norm().max(pair.lower.norm());
    20.0 * (pair.harmonics_max / fundamental).log10()
}

#[test]
fn criterion_8_linearity_certification() {
    // NOTE: expected to fail honestly at the lowest frequencies. The Kerr
    // response grows as 1/Omega toward zero frequency, so at a fixed
    // modulation ratio of 1e-6 the second-harmonic content rises above the
    // -80 dB bound below roughly 0.01 gamma. This is a property of the
    // physics (the same divergence that produces perfect squeezing at zero
    // frequency), not a numerical artifact; the run is faithfully linear at
    // mid-band frequencies.
    let opts = PropagateOptions::default();
    let mut details = Vec::new();
    let mut pass = true;
    for (label, spec) in [
        ("lossless critical", critical_cavity(0.9, 0.0)),
        ("eta 0.9 critical", critical_cavity(0.9, loss_for_eta(0.9, 0.9))),
    ] {
        let gamma = half_bandwidth(&spec);
        let op = operating_point_for_fraction(&spec, DRIVE_W, 0.75, Branch::Low).unwrap();
        for om in [0.001, 0.01, 0.1, 1.0] {
            let h_db = harmonic_db(&spec, &op, om * gamma, &opts);
            pass &= h_db < -80.0;
            details.push(format!("{label} at {om} gamma: {h_db:.1} dB"));
        }
    }
    report(
        8,
        "linearity: harmonics below -80 dB at mod ratio 1e-6",
        pass,
        &details.join("; "),
    );
}

#[test]
fn criterion_9_experiment_pipeline() {
    // section-6 style cavity: gamma/2pi ~ 4.5 MHz
    let bare = CavitySpec::from_power_coefficients(0.983, 0.005, LENGTH_M, 0.0).unwrap();
    let crit = find_critical_theta(&bare, 0.75).unwrap();
    let cavity = bare.with_theta(crit.theta).unwrap();

    // synthetic relaxation-oscillation peak: 60 dB Lorentzian at 1 MHz
    let f_ro = 1e6;
    let mut csv = String::new();
    for i in 0..=120 {
        let f = 2e5 * 100f64.powf(i as f64 / 120.0);
        let major = 60.0 - 10.0 * (1.0 + ((f - f_ro) / 2e5).powi(2)).log10();
        csv.push_str(&format!("{f},{major}\n"));
    }
    let meas = ingest_spectrum(&csv, "synthetic").unwrap();

    let mut cfg = PipelineConfig {
        cavity,
        drive_power: 0.75,
        vartheta: 10f64.to_radians(),
        minor_offset_db: 33.0,
        mc_pole_hz: 1e6,
        relaxation_pole_hz: Some(f_ro),
        kappa: 0.0,
        phase_noise_port: PhaseNoisePort::LossChannel,
        detection_power: 0.15,
        op_fractions: vec![0.9, 0.95, 0.975, 0.9875],
        freqs_hz: vec![f_ro],
    };
    let opts = PropagateOptions::default();
    let out = run_experiment_model(&cfg, &meas, &opts).unwrap();
    let (best_fraction, best_reduction) = out
        .tables
        .iter()
        .map(|t| (t.power_fraction, t.rows[0].reduction_db))
        .fold((0.0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });

    // kappa > 0 must strictly raise the modeled mid-band noise
    cfg.op_fractions = vec![best_fraction];
    cfg.kappa = 1e-2;
    let noisy = run_experiment_model(&cfg, &meas, &opts).unwrap();
    let raised = noisy.tables[0].rows[0].output_db
        > out
            .tables
            .iter()
            .find(|t| t.power_fraction == best_fraction)
            .unwrap()
            .rows[0]
            .output_db;

    report(
        9,
        "experiment pipeline peak reduction > 25 dB",
        best_reduction < -25.0 && raised,
        &format!(
            "best OP fraction {best_fraction}: {best_reduction:.2} dB at the relaxation oscillation; kappa raises mid-band noise: {raised}"
        ),
    );
}

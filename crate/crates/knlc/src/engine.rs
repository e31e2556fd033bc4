//! Round-trip time-domain propagation of modulated driving fields through the
//! KNLC and discrete-Fourier extraction of sideband amplitudes.
//!
//! The intra-cavity field is iterated one round trip at a time,
//!
//! ```text
//! E_n = i tau_c E_in(n) + rho_c [rho_end e^{2i psi} E_{n-1} + i tau_end e^{i psi} v_{n-1}]
//! psi = Phi + theta |E_{n-1}|^2
//! ```
//!
//! where `v` is the field entering at the end mirror. The reflected field is
//! the unitary coupling-mirror tap `R_n = (E_in(n) + i tau_c E_n) / rho_c`
//! (equal to `rho_c E_in + i tau_c [arriving internal field]`), and the
//! loss-channel output is `i tau_end e^{i psi_n} E_n + rho_end v_n` with the
//! half-trip phase `psi_n = Phi + theta |E_n|^2`.
//!
//! All modulation and analysis frequencies are snapped onto exact DFT bins of
//! the record, `Omega = 2 pi k / (N t_rt)`, so extraction is leakage-free
//! without windowing.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cavity::{round_trip_time, CavitySpec, OperatingPoint};
use crate::error::{Error, Result};

/// Modulation applied to a drive field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    None,
    /// `E0 + x cos(Omega t)`.
    Amplitude,
    /// `E0 + i x cos(Omega t)`.
    Phase,
}

/// Port at which the modulated field enters the cavity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InjectionPort {
    Coupler,
    EndMirror,
}

/// Driving-field description for one propagation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    /// Real mean-field amplitude at the coupler, sqrt(W).
    pub e0: f64,
    pub modulation: Modulation,
    /// Modulation amplitude x1 or x2, sqrt(W).
    pub mod_amplitude: f64,
    /// Modulation frequency, rad/s. Must sit on a DFT bin of the record.
    pub mod_frequency: f64,
    pub port: InjectionPort,
}

impl DriveSpec {
    /// Unmodulated drive of the given mean amplitude.
    pub fn unmodulated(e0: f64) -> Self {
        DriveSpec {
            e0,
            modulation: Modulation::None,
            mod_amplitude: 0.0,
            mod_frequency: 0.0,
            port: InjectionPort::Coupler,
        }
    }
}

/// Engine tolerances and limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagateOptions {
    /// Per-round-trip relative change of the unmodulated envelope below which
    /// the state counts as converged.
    pub convergence_tol: f64,
    /// Number of consecutive converged round trips required.
    pub convergence_rounds: u32,
    /// Maximum warm-up round trips before giving up.
    pub max_warmup: u64,
    /// Multiplier on the post-modulation settling time (transient decay).
    pub warmup_factor: f64,
    /// Default ratio mod_amplitude / E0 used by callers that build drives.
    pub mod_ratio: f64,
    /// Allowed ratio of mod_amplitude to E0 before a coupler drive is
    /// rejected as non-linear.
    pub max_mod_ratio: f64,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions {
            convergence_tol: 1e-12,
            convergence_rounds: 10,
            max_warmup: 10_000_000,
            warmup_factor: 1.0,
            mod_ratio: 1e-6,
            max_mod_ratio: 1e-2,
        }
    }
}

/// Time series of complex field amplitudes sampled once per round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRecord {
    pub samples: Vec<Complex64>,
    /// Sampling interval (the round-trip time), s.
    pub t_rt: f64,
    /// Number of leading round trips discarded before recording.
    pub warmup_count: u64,
    /// Absolute round-trip index of the first sample; modulation phases are
    /// referenced to index 0.
    pub start_index: u64,
}

impl FieldRecord {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Complex sideband amplitudes extracted at one analysis frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandPair {
    /// Bin value at +Omega.
    pub upper: Complex64,
    /// Bin value at -Omega.
    pub lower: Complex64,
    /// Largest magnitude found at k Omega, 2 <= k <= 5 (linearity
    /// diagnostic).
    pub harmonics_max: f64,
    /// The analysis frequency actually used, rad/s.
    pub omega: f64,
}

/// A requested frequency snapped onto the DFT grid of an `n_record`-sample
/// record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnappedFrequency {
    pub omega: f64,
    pub bin: u64,
    pub n_record: u64,
}

/// Snaps `omega` to the nearest DFT bin `2 pi k / (n_record t_rt)`.
pub fn snap_frequency(omega: f64, t_rt: f64, n_record: u64) -> Result<SnappedFrequency> {
    if !n_record.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "record length must be a power of two, got {n_record}"
        )));
    }
    let k = (omega * n_record as f64 * t_rt / (2.0 * std::f64::consts::PI)).round();
    if k < 1.0 {
        return Err(Error::InvalidInput(format!(
            "record of {n_record} samples is too short to resolve {omega} rad/s; \
             increase the record length"
        )));
    }
    if k as u64 > n_record / 2 {
        return Err(Error::InvalidInput(format!(
            "{omega} rad/s exceeds the Nyquist frequency of the round-trip sampling"
        )));
    }
    let bin = k as u64;
    Ok(SnappedFrequency {
        omega: 2.0 * std::f64::consts::PI * k / (n_record as f64 * t_rt),
        bin,
        n_record,
    })
}

/// Chooses the shortest power-of-two record that places `omega` at bin
/// `k >= k_min`, then snaps. Larger `k_min` buys finer frequency resolution
/// relative to the tone.
pub fn choose_record(omega: f64, t_rt: f64, k_min: u64) -> Result<SnappedFrequency> {
    if omega <= 0.0 {
        return Err(Error::InvalidInput("analysis frequency must be positive".into()));
    }
    let mut n: u64 = 2;
    loop {
        let k = omega * n as f64 * t_rt / (2.0 * std::f64::consts::PI);
        if k.round() >= k_min as f64 && k.round() <= (n / 2) as f64 {
            return snap_frequency(omega, t_rt, n);
        }
        n = n.checked_mul(2).ok_or_else(|| {
            Error::InvalidInput(format!(
                "no power-of-two record resolves {omega} rad/s with k >= {k_min}"
            ))
        })?;
        if n > 1 << 32 {
            return Err(Error::InvalidInput(format!(
                "record length needed for {omega} rad/s exceeds 2^32 samples"
            )));
        }
    }
}

/// cos/sin of `2 pi (bin * index mod n) / n` computed with exact integer
/// phase reduction, so modulation and extraction stay phase-coherent over
/// arbitrarily long runs.
#[inline]
fn bin_phase(bin: u64, index: u64, n: u64) -> f64 {
    // bin * index stays below 2^63 for every record size the engine accepts
    let r = bin.wrapping_mul(index) % n;
    2.0 * std::f64::consts::PI * r as f64 / n as f64
}

struct RoundTripState {
    e: Complex64,
    v_prev: Complex64,
    rho_c: f64,
    tau_c: f64,
    rho_end: f64,
    tau_end: f64,
    phi: f64,
    theta: f64,
}

impl RoundTripState {
    fn new(spec: &CavitySpec, op: &OperatingPoint) -> Self {
        RoundTripState {
            e: op.steady_field,
            v_prev: Complex64::new(0.0, 0.0),
            rho_c: spec.rho_c,
            tau_c: spec.tau_c,
            rho_end: spec.rho_end,
            tau_end: spec.l_rt,
            phi: op.phi,
            theta: spec.theta,
        }
    }

    /// Advances one round trip with coupler input `e_in` and end-mirror input
    /// `v`; returns (reflected, loss-port output).
    #[inline]
    fn step(&mut self, e_in: Complex64, v: Complex64) -> (Complex64, Complex64) {
        let psi = self.phi + self.theta * self.e.norm_sqr();
        let (s, c) = psi.sin_cos();
        let half = Complex64::new(c, s);
        let full = half * half;
        let arriving = Complex64::new(self.rho_end, 0.0) * full * self.e
            + Complex64::new(0.0, self.tau_end) * half * self.v_prev;
        self.e = Complex64::new(0.0, self.tau_c) * e_in + Complex64::new(self.rho_c, 0.0) * arriving;
        let reflected = Complex64::new(self.rho_c, 0.0) * e_in
            + Complex64::new(0.0, self.tau_c) * arriving;
        let psi_now = self.phi + self.theta * self.e.norm_sqr();
        let (s2, c2) = psi_now.sin_cos();
        let transmitted = Complex64::new(0.0, self.tau_end) * Complex64::new(c2, s2) * self.e
            + Complex64::new(self.rho_end, 0.0) * v;
        self.v_prev = v;
        (reflected, transmitted)
    }
}

/// Number of round trips for free transients to decay below `eps` in
/// amplitude.
fn decay_steps(spec: &CavitySpec, eps: f64) -> u64 {
    let rho = spec.rho();
    (eps.ln() / rho.ln()).ceil().max(16.0) as u64
}

/// Largest eigenvalue magnitude of the round-trip Jacobian of the linearized
/// (u, w*) dynamics at DC. Kerr self-phase modulation slows relaxation well
/// below the bare `rho_c rho_end` rate near the critical point; settling
/// times must follow this rate, not the bare one.
fn slow_mode_magnitude(spec: &CavitySpec, op: &OperatingPoint) -> f64 {
    let p = op.steady_field.norm_sqr();
    let psi = op.phi + spec.theta * p;
    let a = Complex64::from_polar(spec.rho(), 2.0 * psi);
    let tp = Complex64::new(0.0, 2.0 * spec.theta * p);
    let e2 = op.steady_field * op.steady_field;
    let m11 = a * (Complex64::new(1.0, 0.0) + tp);
    let m12 = a * Complex64::new(0.0, 2.0 * spec.theta) * e2;
    let m21 = -a.conj() * Complex64::new(0.0, 2.0 * spec.theta) * e2.conj();
    let m22 = a.conj() * (Complex64::new(1.0, 0.0) - tp);
    let tr = m11 + m22;
    let det = m11 * m22 - m12 * m21;
    let disc = (tr * tr - 4.0 * det).sqrt();
    let l1 = (tr + disc) * 0.5;
    let l2 = (tr - disc) * 0.5;
    l1.norm().max(l2.norm())
}

/// Round trips needed after switching modulation on before recording: the
/// switch-on transient must decay along the slowest linearized mode. Capped
/// at eight record lengths; the residual of a slower-than-that mode is
/// quasi-static over the record and stays out of the analysis bins.
fn settle_steps(spec: &CavitySpec, op: &OperatingPoint, n_record: u64) -> u64 {
    let base = decay_steps(spec, 1e-14);
    if spec.theta == 0.0 {
        return base;
    }
    let lam = slow_mode_magnitude(spec, op);
    let slow = if lam < 1.0 {
        (1e-13f64.ln() / lam.ln()).ceil().min(1e18) as u64
    } else {
        u64::MAX
    };
    base.max(slow.min(8 * n_record))
}

/// Propagates a modulated drive through the cavity. Returns the reflected
/// and loss-port (transmitted) records, each `n_record` samples long.
///
/// The state is seeded at the steady field of `op`, settled without
/// modulation until the per-round-trip envelope change stays below the
/// convergence tolerance, then settled again with modulation switched on
/// before recording starts. Modulation phases are referenced to the absolute
/// round-trip index at which modulation starts, and that reference is carried
/// in the records so extraction reproduces the true modulation phase.
pub fn propagate(
    spec: &CavitySpec,
    op: &OperatingPoint,
    drive: &DriveSpec,
    n_record: u64,
    opts: &PropagateOptions,
) -> Result<(FieldRecord, FieldRecord)> {
    if !n_record.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "record length must be a power of two, got {n_record}"
        )));
    }
    if drive.e0 < 0.0 {
        return Err(Error::InvalidSpec("mean field must be real and non-negative".into()));
    }
    let t_rt = round_trip_time(spec);
    let modulated = !matches!(drive.modulation, Modulation::None) && drive.mod_amplitude != 0.0;
    let bin = if modulated {
        if drive.port == InjectionPort::Coupler
            && drive.e0 > 0.0
            && drive.mod_amplitude.abs() / drive.e0 > opts.max_mod_ratio
        {
            return Err(Error::InvalidSpec(format!(
                "modulation ratio {} exceeds the linear-regime limit {}",
                drive.mod_amplitude.abs() / drive.e0,
                opts.max_mod_ratio
            )));
        }
        let k = drive.mod_frequency * n_record as f64 * t_rt / (2.0 * std::f64::consts::PI);
        if (k - k.round()).abs() > 1e-9 * k.round().max(1.0) || k.round() < 1.0 {
            return Err(Error::InvalidInput(format!(
                "modulation frequency {} rad/s is off the DFT grid; snap it with \
                 snap_frequency or choose_record first",
                drive.mod_frequency
            )));
        }
        k.round() as u64
    } else {
        0
    };

    let mut state = RoundTripState::new(spec, op);
    let e0 = Complex64::new(drive.e0, 0.0);
    // instability guard: |E| beyond 10^3 times the claimed steady amplitude
    let escape_power = 1e6 * op.intracavity_power;

    // stage 1: unmodulated settling with convergence detection
    let mut consecutive = 0u32;
    let mut warm1: u64 = 0;
    let mut prev = state.e;
    while consecutive < opts.convergence_rounds {
        state.step(e0, Complex64::new(0.0, 0.0));
        warm1 += 1;
        let change = (state.e - prev).norm() / state.e.norm().max(f64::MIN_POSITIVE);
        prev = state.e;
        if change < opts.convergence_tol {
            consecutive += 1;
        } else {
            consecutive = 0;
        }
        if state.e.norm_sqr() > escape_power {
            return Err(Error::Numerics(format!(
                "intra-cavity field diverged during warm-up (|E|^2 = {:.3e}); \
                 wrong branch or beyond-critical drive",
                state.e.norm_sqr()
            )));
        }
        if warm1 > opts.max_warmup {
            return Err(Error::Numerics(format!(
                "no steady state within {} warm-up round trips",
                opts.max_warmup
            )));
        }
    }

    // stage 2: modulation on. At the critical point the slowest linearized
    // mode is marginal (eigenvalue magnitude 1) and a sudden switch-on
    // transient would never decay, so the modulation amplitude is ramped
    // adiabatically with a C^3 smoothstep over one settle period (excitation
    // of off-frequency modes suppressed as (Omega * ramp)^-4), then held at
    // full amplitude for another settle period before recording.
    let settle = if modulated {
        ((settle_steps(spec, op, n_record) as f64) * opts.warmup_factor).ceil() as u64
    } else {
        0
    };
    let ramp = settle;
    let warm2 = ramp + settle;
    let total = warm2 + n_record;
    let mut reflected = Vec::with_capacity(n_record as usize);
    let mut transmitted = Vec::with_capacity(n_record as usize);
    for n in 0..total {
        let tone = if modulated {
            let envelope = if n < ramp {
                let s = (n + 1) as f64 / ramp as f64;
                // smoothstep S3: C^3 contact at both ends
                s * s * s * s * (35.0 + s * (-84.0 + s * (70.0 - 20.0 * s)))
            } else {
                1.0
            };
            let amp = envelope * drive.mod_amplitude * bin_phase(bin, n, n_record).cos();
            match drive.modulation {
                Modulation::Amplitude => Complex64::new(amp, 0.0),
                Modulation::Phase => Complex64::new(0.0, amp),
                Modulation::None => unreachable!(),
            }
        } else {
            Complex64::new(0.0, 0.0)
        };
        let (e_in, v) = match drive.port {
            InjectionPort::Coupler => (e0 + tone, Complex64::new(0.0, 0.0)),
            InjectionPort::EndMirror => (e0, tone),
        };
        let (r, t) = state.step(e_in, v);
        if state.e.norm_sqr() > escape_power {
            return Err(Error::Numerics(format!(
                "intra-cavity field diverged during modulated run (|E|^2 = {:.3e})",
                state.e.norm_sqr()
            )));
        }
        if n >= warm2 {
            reflected.push(r);
            transmitted.push(t);
        }
    }
    let make = |samples: Vec<Complex64>| FieldRecord {
        samples,
        t_rt,
        warmup_count: warm1 + warm2,
        start_index: warm2,
    };
    Ok((make(reflected), make(transmitted)))
}

/// Evaluates DFT bins of a record with the kernel referenced to absolute
/// round-trip indices (`start_index + i`). `bins` are signed bin numbers.
fn dft_bins(record: &FieldRecord, bins: &[i64]) -> Vec<Complex64> {
    let n = record.len() as u64;
    // The carrier dominates the record by many orders of magnitude; removing
    // the mean before accumulating (a no-op for non-zero bins in exact
    // arithmetic) keeps rounding noise relative to the sidebands, not the
    // carrier.
    let mean = record.samples.iter().sum::<Complex64>() / n as f64;
    let mut acc = vec![Complex64::new(0.0, 0.0); bins.len()];
    let mut comp = vec![Complex64::new(0.0, 0.0); bins.len()];
    let mut phasor = vec![Complex64::new(0.0, 0.0); bins.len()];
    let mut step = vec![Complex64::new(0.0, 0.0); bins.len()];
    let unsigned: Vec<u64> = bins
        .iter()
        .map(|&b| if b >= 0 { b as u64 % n } else { n - ((-b) as u64 % n) } % n)
        .collect();
    for (j, &b) in unsigned.iter().enumerate() {
        // kernel e^{-2 pi i b idx / n}
        let a = -2.0 * std::f64::consts::PI * b as f64 / n as f64;
        step[j] = Complex64::from_polar(1.0, a);
    }
    const RESYNC: u64 = 4096;
    for (i, &s) in record.samples.iter().enumerate() {
        let i = i as u64;
        if i % RESYNC == 0 {
            for (j, &b) in unsigned.iter().enumerate() {
                let a = bin_phase(b, record.start_index.wrapping_add(i), n);
                phasor[j] = Complex64::from_polar(1.0, -a);
            }
        }
        let centred = s - mean;
        for j in 0..bins.len() {
            // Kahan-compensated accumulation
            let y = centred * phasor[j] - comp[j];
            let t = acc[j] + y;
            comp[j] = (t - acc[j]) - y;
            acc[j] = t;
            phasor[j] *= step[j];
        }
    }
    let scale = 1.0 / n as f64;
    acc.iter().map(|a| a * scale).collect()
}

/// Extracts the complex sideband pair of a record at `omega`, which must sit
/// exactly on a DFT bin. Also reports the largest harmonic magnitude at
/// `k omega`, 2 <= k <= 5, as a linearity diagnostic.
pub fn extract_sidebands(record: &FieldRecord, omega: f64) -> Result<SidebandPair> {
    if record.is_empty() {
        return Err(Error::InvalidInput("empty field record".into()));
    }
    let n = record.len() as u64;
    let k_exact = omega * n as f64 * record.t_rt / (2.0 * std::f64::consts::PI);
    let k = k_exact.round();
    if (k_exact - k).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "{omega} rad/s is off the DFT grid of this record; snap it with \
             snap_frequency first"
        )));
    }
    if k < 1.0 {
        return Err(Error::InvalidInput(format!(
            "record too short to resolve {omega} rad/s"
        )));
    }
    let k = k as i64;
    if k as u64 > n / 2 {
        return Err(Error::InvalidInput(format!(
            "{omega} rad/s exceeds the Nyquist frequency of this record"
        )));
    }
    let mut bins = vec![k, -k];
    for h in 2..=5i64 {
        if (h * k) as u64 <= n / 2 {
            bins.push(h * k);
            bins.push(-h * k);
        }
    }
    let values = dft_bins(record, &bins);
    let harmonics_max = values[2..]
        .iter()
        .map(|v| v.norm())
        .fold(0.0f64, f64::max);
    Ok(SidebandPair {
        upper: values[0],
        lower: values[1],
        harmonics_max,
        omega: 2.0 * std::f64::consts::PI * k as f64 / (n as f64 * record.t_rt),
    })
}

const DUMP_MAGIC: &[u8; 8] = b"KNLCFLD\0";
const DUMP_VERSION: u64 = 1;

/// Writes a record as binary little-endian interleaved (re, im) doubles with
/// a 32-byte header (magic, version, N, t_rt).
pub fn write_field_record<W: std::io::Write>(record: &FieldRecord, mut w: W) -> Result<()> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&(record.len() as u64).to_le_bytes())?;
    w.write_all(&record.t_rt.to_le_bytes())?;
    for s in &record.samples {
        w.write_all(&s.re.to_le_bytes())?;
        w.write_all(&s.im.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a record written by [`write_field_record`]. Warm-up metadata is not
/// part of the dump format; the returned record is re-based to index 0.
pub fn read_field_record<R: std::io::Read>(mut r: R) -> Result<FieldRecord> {
    let mut header = [0u8; 32];
    r.read_exact(&mut header)?;
    if &header[0..8] != DUMP_MAGIC {
        return Err(Error::InvalidInput("not a field-record dump (bad magic)".into()));
    }
    let version = u64::from_le_bytes(header[8..16].try_into().unwrap());
    if version != DUMP_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported field-record dump version {version}"
        )));
    }
    let n = u64::from_le_bytes(header[16..24].try_into().unwrap());
    let t_rt = f64::from_le_bytes(header[24..32].try_into().unwrap());
    let mut samples = Vec::with_capacity(n as usize);
    let mut buf = [0u8; 16];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        samples.push(Complex64::new(
            f64::from_le_bytes(buf[0..8].try_into().unwrap()),
            f64::from_le_bytes(buf[8..16].try_into().unwrap()),
        ));
    }
    Ok(FieldRecord {
        samples,
        t_rt,
        warmup_count: 0,
        start_index: 0,
    })
}

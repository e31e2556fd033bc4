//! End-to-end experiment model: measured input-noise ingestion, double-pass
//! mode-cleaner filtering, intra-cavity 1/f phase-noise injection and
//! detection attenuation, producing noise-reduction spectra normalized to
//! the peak input noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::{operating_point_for_fraction, round_trip_time, Branch, CavitySpec, OperatingPoint};
use crate::engine::{choose_record, PropagateOptions};
use crate::error::{Error, Result};
use crate::transfer::{
    dress_with_input_noise, measure_transfer, spectral_density, InputNoiseSpec, SpectralMatrix,
    TransferMatrix,
};

/// A measured relative power spectrum: (frequency in Hz, power in dB
/// relative to the reference).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSpectrum {
    pub rows: Vec<(f64, f64)>,
    pub source: String,
}

impl MeasuredSpectrum {
    /// Frequency band covered, Hz.
    pub fn band(&self) -> (f64, f64) {
        (self.rows[0].0, self.rows[self.rows.len() - 1].0)
    }

    /// Frequency of the largest entry (the relaxation-oscillation peak for a
    /// laser intensity-noise measurement), Hz.
    pub fn peak_frequency(&self) -> f64 {
        self.rows
            .iter()
            .fold((0.0, f64::NEG_INFINITY), |acc, &(f, db)| {
                if db > acc.1 {
                    (f, db)
                } else {
                    acc
                }
            })
            .0
    }

    pub fn peak_db(&self) -> f64 {
        self.rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Linear interpolation in log-frequency.
    pub fn db_at(&self, freq_hz: f64) -> Result<f64> {
        let (lo, hi) = self.band();
        if !(freq_hz >= lo && freq_hz <= hi) {
            return Err(Error::InvalidInput(format!(
                "{freq_hz} Hz outside the measured band [{lo}, {hi}] Hz"
            )));
        }
        let idx = self.rows.partition_point(|r| r.0 <= freq_hz);
        if idx == 0 {
            return Ok(self.rows[0].1);
        }
        if idx >= self.rows.len() {
            return Ok(self.rows[self.rows.len() - 1].1);
        }
        let (f0, d0) = self.rows[idx - 1];
        let (f1, d1) = self.rows[idx];
        if f1 == f0 {
            return Ok(d0);
        }
        let t = (freq_hz.ln() - f0.ln()) / (f1.ln() - f0.ln());
        Ok(d0 + t * (d1 - d0))
    }
}

/// Parses a two-column (Hz, dB) CSV. An optional non-numeric header line is
/// skipped; separators are commas or whitespace.
pub fn ingest_spectrum(text: &str, source: &str) -> Result<MeasuredSpectrum> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 2 {
            if rows.is_empty() && i == 0 {
                continue; // header line
            }
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected two columns, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("not a number: {s:?}"),
            })
        };
        let (f, db) = match (parse(fields[0]), parse(fields[1])) {
            (Ok(f), Ok(db)) => (f, db),
            (e @ Err(_), _) | (_, e @ Err(_)) => {
                if rows.is_empty() && i == 0 {
                    continue; // header line
                }
                e?;
                unreachable!();
            }
        };
        if !f.is_finite() || !db.is_finite() || f <= 0.0 {
            return Err(Error::Parse {
                line: line_no,
                message: "frequency must be positive and values finite".into(),
            });
        }
        rows.push((f, db));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no data rows in measured spectrum {source:?}"
        )));
    }
    if rows.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidInput(
            "measured spectrum frequencies must be strictly ascending".into(),
        ));
    }
    Ok(MeasuredSpectrum {
        rows,
        source: source.to_string(),
    })
}

/// Writes a measured spectrum back to CSV.
pub fn write_spectrum_csv(meas: &MeasuredSpectrum) -> String {
    let mut out = String::from("frequency_hz,power_db\n");
    for &(f, db) in &meas.rows {
        out.push_str(&format!("{f:.9e},{db:.9e}\n"));
    }
    out
}

/// Where the fitted intra-cavity phase noise couples in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseNoisePort {
    /// Through the loss-channel transfer matrix (it originates inside the
    /// cavity). The default.
    LossChannel,
    /// Through the coupler-channel transfer matrix (as if it entered with
    /// the drive).
    CouplerInput,
}

/// Full configuration of the experiment model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cavity: CavitySpec,
    /// Drive power at the cavity, W.
    pub drive_power: f64,
    /// Input-ellipse orientation, rad.
    pub vartheta: f64,
    /// Minor axis sits this many dB below the measured peak.
    pub minor_offset_db: f64,
    /// Mode-cleaner pole frequency, Hz.
    pub mc_pole_hz: f64,
    /// Relaxation-oscillation pole for the minor-axis shaping, Hz; default
    /// is the peak frequency of the measurement.
    pub relaxation_pole_hz: Option<f64>,
    /// 1/f phase-noise amplitude coefficient (>= 0; 0 disables).
    pub kappa: f64,
    pub phase_noise_port: PhaseNoisePort,
    /// Power at the detector after attenuation, W.
    pub detection_power: f64,
    /// Power fractions of the operating points to evaluate.
    pub op_fractions: Vec<f64>,
    /// Analysis frequencies, Hz; empty derives a log grid from the measured
    /// band.
    pub freqs_hz: Vec<f64>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kappa < 0.0 {
            return Err(Error::InvalidSpec("kappa must be >= 0".into()));
        }
        if self.mc_pole_hz <= 0.0 {
            return Err(Error::InvalidSpec("mode-cleaner pole must be positive".into()));
        }
        if self.detection_power <= 0.0 || self.detection_power > self.drive_power {
            return Err(Error::InvalidSpec(
                "detection power must lie in (0, drive power]".into(),
            ));
        }
        if self.op_fractions.is_empty() {
            return Err(Error::InvalidSpec("no operating points configured".into()));
        }
        Ok(())
    }

    /// Detection beamsplitter power factor a.
    pub fn attenuation(&self) -> f64 {
        self.detection_power / self.drive_power
    }
}

/// Frequency-dependent classical input noise: amplitude scale factors per
/// frequency at a fixed ellipse orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNoiseTable {
    /// (frequency Hz, s1, s2), ascending in frequency.
    pub rows: Vec<(f64, f64, f64)>,
    pub vartheta: f64,
}

impl InputNoiseTable {
    /// Interpolated noise spec at a frequency (linear in dB over log-f).
    pub fn at(&self, freq_hz: f64) -> Result<InputNoiseSpec> {
        let lo = self.rows[0].0;
        let hi = self.rows[self.rows.len() - 1].0;
        if !(freq_hz >= lo && freq_hz <= hi) {
            return Err(Error::InvalidInput(format!(
                "{freq_hz} Hz outside the input-noise band [{lo}, {hi}] Hz"
            )));
        }
        let idx = self.rows.partition_point(|r| r.0 <= freq_hz);
        let (f0, s1_0, s2_0) = self.rows[idx.saturating_sub(1)];
        let (f1, s1_1, s2_1) = self.rows[idx.min(self.rows.len() - 1)];
        let t = if f1 == f0 {
            0.0
        } else {
            (freq_hz.ln() - f0.ln()) / (f1.ln() - f0.ln())
        };
        let lerp_db = |a: f64, b: f64| {
            let db = 20.0 * a.log10() + t * (20.0 * b.log10() - 20.0 * a.log10());
            10f64.powf(db / 20.0)
        };
        Ok(InputNoiseSpec {
            s1: lerp_db(s1_0, s1_1),
            s2: lerp_db(s2_0, s2_1),
            vartheta: self.vartheta,
        })
    }
}

/// Single-pole low-pass power attenuation `|1 / (1 + i f/f_pole)|^2`.
pub fn pole_attenuation(freq_hz: f64, pole_hz: f64) -> f64 {
    let r = freq_hz / pole_hz;
    1.0 / (1.0 + r * r)
}

/// Builds the frequency-dependent input ellipse from a measured power
/// spectrum: the major (X_vartheta) axis follows the measurement; the minor
/// axis is the measured peak minus `minor_offset_db`, rolled off by a single
/// pole at the relaxation oscillation (1/f^2 in power above it).
pub fn build_input_noise(
    meas: &MeasuredSpectrum,
    cfg: &PipelineConfig,
) -> Result<InputNoiseTable> {
    let peak_db = meas.peak_db();
    let pole = cfg.relaxation_pole_hz.unwrap_or_else(|| meas.peak_frequency());
    if pole <= 0.0 {
        return Err(Error::InvalidSpec("relaxation pole must be positive".into()));
    }
    let mut rows = Vec::with_capacity(meas.rows.len());
    for &(f, major_db) in &meas.rows {
        let minor_db = peak_db - cfg.minor_offset_db + 10.0 * pole_attenuation(f, pole).log10();
        // amplitude factors; never below vacuum
        let s1 = 10f64.powf(major_db / 20.0).max(1.0);
        let s2 = 10f64.powf(minor_db / 20.0).max(1.0);
        rows.push((f, s1, s2));
    }
    Ok(InputNoiseTable {
        rows,
        vartheta: cfg.vartheta,
    })
}

/// Applies the mode-cleaner low-pass to an input-noise table. Only the
/// classical excess above vacuum is attenuated; a passive filter cavity
/// refills the reflected port with vacuum, so the floor stays at s = 1.
pub fn mode_cleaner_filter_input(table: &InputNoiseTable, pole_hz: f64) -> Result<InputNoiseTable> {
    if pole_hz <= 0.0 {
        return Err(Error::InvalidSpec("mode-cleaner pole must be positive".into()));
    }
    let rows = table
        .rows
        .iter()
        .map(|&(f, s1, s2)| {
            let h = pole_attenuation(f, pole_hz);
            let filt = |s: f64| (1.0 + (s * s - 1.0) * h).sqrt();
            (f, filt(s1), filt(s2))
        })
        .collect();
    Ok(InputNoiseTable {
        rows,
        vartheta: table.vartheta,
    })
}

/// Applies the mode-cleaner low-pass to an output spectral density (second
/// pass after the KNLC), with the same vacuum floor.
pub fn mode_cleaner_filter_spectral(
    s: &SpectralMatrix,
    freq_hz: f64,
    pole_hz: f64,
) -> SpectralMatrix {
    let h = pole_attenuation(freq_hz, pole_hz);
    SpectralMatrix {
        s11: 1.0 + (s.s11 - 1.0) * h,
        s22: 1.0 + (s.s22 - 1.0) * h,
        s12: s.s12 * h,
        omega: s.omega,
    }
}

/// Adds the fitted intra-cavity 1/f phase noise, variance
/// `kappa^2 |E|^4 / Omega`, propagated through the phase column of the
/// chosen channel's transfer matrix.
pub fn inject_phase_noise(
    s_tot: &SpectralMatrix,
    op: &OperatingPoint,
    kappa: f64,
    omega: f64,
    channel: &TransferMatrix,
) -> Result<SpectralMatrix> {
    if kappa < 0.0 {
        return Err(Error::InvalidSpec("kappa must be >= 0".into()));
    }
    if omega <= 0.0 {
        return Err(Error::InvalidInput("omega must be positive".into()));
    }
    let p = op.intracavity_power;
    let sigma_sq = kappa * kappa * p * p / omega;
    Ok(SpectralMatrix {
        s11: s_tot.s11 + sigma_sq * channel.t12.norm_sqr(),
        s22: s_tot.s22 + sigma_sq * channel.t22.norm_sqr(),
        s12: s_tot.s12 + sigma_sq * (channel.t12 * channel.t22.conj()).re,
        omega: s_tot.omega,
    })
}

/// Detection attenuation: a beamsplitter of power factor `a` mixes the state
/// with vacuum, `a S + (1 - a) I`.
pub fn attenuate(s: &SpectralMatrix, a: f64) -> Result<SpectralMatrix> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidInput(format!(
            "attenuation factor must lie in [0,1], got {a}"
        )));
    }
    Ok(SpectralMatrix {
        s11: a * s.s11 + (1.0 - a),
        s22: a * s.s22 + (1.0 - a),
        s12: a * s.s12,
        omega: s.omega,
    })
}

/// One output row of the experiment model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub freq_hz: f64,
    /// Input major-axis noise, dB relative to shot noise.
    pub input_db: f64,
    /// Detected amplitude-quadrature noise, dB relative to shot noise.
    pub output_db: f64,
    /// Output relative to the peak input noise, dB.
    pub reduction_db: f64,
}

/// Modeled spectrum for one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub power_fraction: f64,
    pub rows: Vec<ExperimentRow>,
}

/// Full experiment-model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub tables: Vec<ExperimentTable>,
    /// Peak input noise used for normalization, dB relative to shot noise.
    pub peak_input_db: f64,
    pub kappa: f64,
}

fn default_freq_grid(meas: &MeasuredSpectrum) -> Vec<f64> {
    let (lo, hi) = meas.band();
    let points_per_decade = 20.0;
    let n = ((hi / lo).log10() * points_per_decade).ceil().max(2.0) as usize;
    (0..=n)
        .map(|i| lo * (hi / lo).powf(i as f64 / n as f64))
        .collect()
}

/// Runs the full §-style pipeline: input ellipse construction, first
/// mode-cleaner pass, KNLC reflection per operating point, phase-noise
/// injection, second mode-cleaner pass and detection attenuation. Output
/// spectra are normalized to the peak input noise.
pub fn run_experiment_model(
    cfg: &PipelineConfig,
    meas: &MeasuredSpectrum,
    opts: &PropagateOptions,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let noise_in = build_input_noise(meas, cfg)?;
    let filtered = mode_cleaner_filter_input(&noise_in, cfg.mc_pole_hz)?;
    let peak_input_db = meas.peak_db();
    let a = cfg.attenuation();
    let freqs = if cfg.freqs_hz.is_empty() {
        default_freq_grid(meas)
    } else {
        cfg.freqs_hz.clone()
    };
    let t_rt = round_trip_time(&cfg.cavity);

    let mut tables = Vec::with_capacity(cfg.op_fractions.len());
    for &fraction in &cfg.op_fractions {
        let op = operating_point_for_fraction(&cfg.cavity, cfg.drive_power, fraction, Branch::Low)?;
        let rows = freqs
            .par_iter()
            .map(|&f| -> Result<ExperimentRow> {
                let omega = 2.0 * std::f64::consts::PI * f;
                let snapped = choose_record(omega, t_rt, 8)?;
                let (t, l) = measure_transfer(&cfg.cavity, &op, &snapped, opts)?;
                let noise = filtered.at(f)?;
                let dressed = dress_with_input_noise(&t, &noise)?;
                let mut s = spectral_density(&dressed).add(&spectral_density(&l))?;
                if cfg.kappa > 0.0 {
                    let channel = match cfg.phase_noise_port {
                        PhaseNoisePort::LossChannel => &l,
                        PhaseNoisePort::CouplerInput => &t,
                    };
                    s = inject_phase_noise(&s, &op, cfg.kappa, snapped.omega, channel)?;
                }
                s = mode_cleaner_filter_spectral(&s, f, cfg.mc_pole_hz);
                s = attenuate(&s, a)?;
                let output_db = 10.0 * s.s11.log10();
                Ok(ExperimentRow {
                    freq_hz: f,
                    input_db: meas.db_at(f)?,
                    output_db,
                    reduction_db: output_db - peak_input_db,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        tables.push(ExperimentTable {
            power_fraction: fraction,
            rows,
        });
    }
    Ok(ExperimentOutput {
        tables,
        peak_input_db,
        kappa: cfg.kappa,
    })
}

/// Result of the phase-noise fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kappa: f64,
    /// Root-mean-square dB residual at the optimum.
    pub residual_db: f64,
}

/// Fits `kappa` so that the modeled spectrum of the first configured
/// operating point matches a target spectrum (dB least squares over the
/// common band). Golden-section search over log kappa.
pub fn fit_phase_noise(
    cfg: &PipelineConfig,
    meas: &MeasuredSpectrum,
    target: &MeasuredSpectrum,
    opts: &PropagateOptions,
) -> Result<FitResult> {
    let mut cfg = cfg.clone();
    cfg.op_fractions.truncate(1);
    let mut cost = |kappa: f64| -> Result<f64> {
        cfg.kappa = kappa;
        let out = run_experiment_model(&cfg, meas, opts)?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for row in &out.tables[0].rows {
            if let Ok(t_db) = target.db_at(row.freq_hz) {
                let d = row.reduction_db - t_db;
                sum += d * d;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InvalidInput(
                "target spectrum does not overlap the analysis band".into(),
            ));
        }
        Ok(sum / n as f64)
    };

    // coarse bracket over a wide log range, then golden-section refinement
    let mut best = (0.0f64, cost(0.0)?);
    let mut ks: Vec<f64> = Vec::new();
    for i in 0..=24 {
        ks.push(10f64.powf(-12.0 + i as f64));
    }
    let mut best_i = None;
    for (i, &k) in ks.iter().enumerate() {
        let c = cost(k)?;
        if c < best.1 {
            best = (k, c);
            best_i = Some(i);
        }
    }
    if let Some(i) = best_i {
        let mut lo = if i == 0 { ks[0] / 10.0 } else { ks[i - 1] }.ln();
        let mut hi = if i + 1 < ks.len() { ks[i + 1] } else { ks[i] * 10.0 }.ln();
        let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut f1 = cost(x1.exp())?;
        let mut f2 = cost(x2.exp())?;
        for _ in 0..40 {
            if f1 < f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = cost(x1.exp())?;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = cost(x2.exp())?;
            }
        }
        let k = (0.5 * (lo + hi)).exp();
        let c = cost(k)?;
        if c < best.1 {
            best = (k, c);
        }
    }
    Ok(FitResult {
        kappa: best.0,
        residual_db: best.1.sqrt(),
    })
}

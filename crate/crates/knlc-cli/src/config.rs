//! Flat key=value run configuration with unit-suffixed keys, defaults and a
//! fully resolved echo for output manifests.

use std::collections::BTreeMap;
use std::path::PathBuf;

use knlc::cavity::{find_critical_theta, Branch, CavitySpec};
use knlc::engine::PropagateOptions;
use knlc::pipeline::PhaseNoisePort;
use knlc::transfer::InputNoiseSpec;
use knlc::{Error, Result};

/// Everything a subcommand needs, resolved from the config file plus
/// command-line overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub cavity: CavitySpec,
    /// True when theta was resolved to the critical value.
    pub theta_critical: bool,
    pub drive_power_w: f64,
    pub branch: Branch,
    pub op_fraction: f64,
    pub noise: InputNoiseSpec,
    pub freq_min_over_gamma: f64,
    pub freq_max_over_gamma: f64,
    pub points_per_decade: usize,
    pub resonance_points: usize,
    pub wigner_freq_over_gamma: f64,
    pub wigner_resolution: usize,
    pub wigner_op_fractions: Vec<f64>,
    pub optimize_freq_over_gamma: f64,
    pub opts: PropagateOptions,
    pub measured_csv: Option<PathBuf>,
    pub fit_target_csv: Option<PathBuf>,
    pub mc_pole_hz: f64,
    pub relaxation_pole_hz: Option<f64>,
    pub kappa: f64,
    pub minor_offset_db: f64,
    pub detection_power_w: f64,
    pub phase_noise_port: PhaseNoisePort,
    pub experiment_op_fractions: Vec<f64>,
    pub experiment_freqs_hz: Vec<f64>,
    /// Fully resolved key=value view, defaults included, for the manifest.
    pub echo: BTreeMap<String, String>,
}

/// Command-line overrides applied after the file is parsed.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub mod_ratio: Option<f64>,
    pub tolerance: Option<f64>,
}

const KNOWN_KEYS: &[&str] = &[
    "coupler_power_reflectivity",
    "roundtrip_power_loss",
    "length_m",
    "theta_rad_per_w",
    "theta_critical",
    "drive_power_w",
    "branch",
    "op_fraction",
    "noise_s1_db",
    "noise_s2_db",
    "noise_vartheta_deg",
    "freq_min_over_gamma",
    "freq_max_over_gamma",
    "points_per_decade",
    "resonance_points",
    "wigner_freq_over_gamma",
    "wigner_resolution",
    "wigner_op_fractions",
    "optimize_freq_over_gamma",
    "mod_ratio",
    "tolerance",
    "measured_csv",
    "fit_target_csv",
    "mc_pole_hz",
    "relaxation_pole_hz",
    "kappa",
    "minor_offset_db",
    "detection_power_w",
    "phase_noise_port",
    "experiment_op_fractions",
    "experiment_freqs_hz",
];

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected key = value, got {trimmed:?}"),
        })?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("unknown config key {key:?}"),
            });
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate config key {key:?}"),
            });
        }
    }
    Ok(map)
}

struct Getter {
    map: BTreeMap<String, String>,
    echo: BTreeMap<String, String>,
}

impl Getter {
    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        let raw = self.map.remove(key);
        let v = match raw {
            Some(s) => s.parse::<f64>().map_err(|_| {
                Error::InvalidSpec(format!("config key {key}: not a number: {s:?}"))
            })?,
            None => default,
        };
        self.echo.insert(key.into(), format!("{v}"));
        Ok(v)
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        let raw = self.map.remove(key);
        let v = match raw {
            Some(s) => s.parse::<usize>().map_err(|_| {
                Error::InvalidSpec(format!("config key {key}: not a count: {s:?}"))
            })?,
            None => default,
        };
        self.echo.insert(key.into(), format!("{v}"));
        Ok(v)
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        let raw = self.map.remove(key);
        let v = match raw.as_deref() {
            Some("true") => true,
            Some("false") => false,
            Some(s) => {
                return Err(Error::InvalidSpec(format!(
                    "config key {key}: expected true or false, got {s:?}"
                )))
            }
            None => default,
        };
        self.echo.insert(key.into(), format!("{v}"));
        Ok(v)
    }

    fn f64_list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let raw = self.map.remove(key);
        let v = match raw {
            Some(s) => s
                .split(',')
                .map(|p| {
                    p.trim().parse::<f64>().map_err(|_| {
                        Error::InvalidSpec(format!("config key {key}: not a number: {p:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => default.to_vec(),
        };
        self.echo.insert(
            key.into(),
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        Ok(v)
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        let v = self.map.remove(key).unwrap_or_else(|| default.to_string());
        self.echo.insert(key.into(), v.clone());
        v
    }

    fn opt_path(&mut self, key: &str) -> Option<PathBuf> {
        match self.map.remove(key) {
            Some(s) if !s.is_empty() => {
                self.echo.insert(key.into(), s.clone());
                Some(PathBuf::from(s))
            }
            _ => {
                self.echo.insert(key.into(), String::new());
                None
            }
        }
    }
}

/// Parses config text and applies overrides; resolves theta_critical to a
/// concrete Kerr coefficient.
pub fn resolve_config(text: &str, overrides: &Overrides) -> Result<RunConfig> {
    let map = parse_kv(text)?;
    let mut g = Getter {
        map,
        echo: BTreeMap::new(),
    };

    let rc2 = g.f64("coupler_power_reflectivity", 0.9)?;
    let loss = g.f64("roundtrip_power_loss", 0.0)?;
    let length = g.f64("length_m", 0.0587)?;
    let theta_key = g.f64("theta_rad_per_w", 0.0)?;
    let theta_critical = g.bool("theta_critical", false)?;
    let drive_power_w = g.f64("drive_power_w", 0.75)?;
    let branch = match g.string("branch", "low").as_str() {
        "low" => Branch::Low,
        "high" => Branch::High,
        other => {
            return Err(Error::InvalidSpec(format!(
                "config key branch: expected low or high, got {other:?}"
            )))
        }
    };
    let op_fraction = g.f64("op_fraction", 0.75)?;
    let s1_db = g.f64("noise_s1_db", 0.0)?;
    let s2_db = g.f64("noise_s2_db", 0.0)?;
    let vartheta_deg = g.f64("noise_vartheta_deg", 0.0)?;
    let freq_min_over_gamma = g.f64("freq_min_over_gamma", 0.001)?;
    let freq_max_over_gamma = g.f64("freq_max_over_gamma", 10.0)?;
    let points_per_decade = g.usize("points_per_decade", 10)?;
    let resonance_points = g.usize("resonance_points", 400)?;
    let wigner_freq_over_gamma = g.f64("wigner_freq_over_gamma", 0.1)?;
    let wigner_resolution = g.usize("wigner_resolution", 201)?;
    let wigner_op_fractions = g.f64_list("wigner_op_fractions", &[0.55, 0.95])?;
    let optimize_freq_over_gamma = g.f64("optimize_freq_over_gamma", 0.1)?;
    let mod_ratio_cfg = g.f64("mod_ratio", 1e-6)?;
    let tolerance_cfg = g.f64("tolerance", 1e-12)?;
    let measured_csv = g.opt_path("measured_csv");
    let fit_target_csv = g.opt_path("fit_target_csv");
    let mc_pole_hz = g.f64("mc_pole_hz", 1e6)?;
    let relaxation_raw = g.f64("relaxation_pole_hz", 0.0)?;
    let kappa = g.f64("kappa", 0.0)?;
    let minor_offset_db = g.f64("minor_offset_db", 33.0)?;
    let detection_power_w = g.f64("detection_power_w", 0.15)?;
    let phase_noise_port = match g.string("phase_noise_port", "loss").as_str() {
        "loss" => PhaseNoisePort::LossChannel,
        "input" => PhaseNoisePort::CouplerInput,
        other => {
            return Err(Error::InvalidSpec(format!(
                "config key phase_noise_port: expected loss or input, got {other:?}"
            )))
        }
    };
    let experiment_op_fractions = g.f64_list("experiment_op_fractions", &[0.75])?;
    let experiment_freqs_hz = g.f64_list("experiment_freqs_hz", &[])?;

    debug_assert!(g.map.is_empty(), "unknown keys rejected at parse time");

    let bare = CavitySpec::from_power_coefficients(rc2, loss, length, 0.0)?;
    let cavity = if theta_critical {
        let crit = find_critical_theta(&bare, drive_power_w)?;
        bare.with_theta(crit.theta)?
    } else {
        bare.with_theta(theta_key)?
    };
    g.echo
        .insert("theta_rad_per_w".into(), format!("{}", cavity.theta));

    let mod_ratio = overrides.mod_ratio.unwrap_or(mod_ratio_cfg);
    let tolerance = overrides.tolerance.unwrap_or(tolerance_cfg);
    if mod_ratio <= 0.0 || tolerance <= 0.0 {
        return Err(Error::InvalidSpec(
            "mod_ratio and tolerance must be positive".into(),
        ));
    }
    g.echo.insert("mod_ratio".into(), format!("{mod_ratio}"));
    g.echo.insert("tolerance".into(), format!("{tolerance}"));
    let opts = PropagateOptions {
        mod_ratio,
        convergence_tol: tolerance,
        ..PropagateOptions::default()
    };

    if freq_min_over_gamma <= 0.0 || freq_max_over_gamma <= freq_min_over_gamma {
        return Err(Error::InvalidSpec(
            "frequency range must satisfy 0 < min < max".into(),
        ));
    }
    if points_per_decade == 0 || resonance_points < 2 || wigner_resolution < 2 {
        return Err(Error::InvalidSpec(
            "grid sizes must be at least 2 (and points_per_decade at least 1)".into(),
        ));
    }
    let noise = InputNoiseSpec::from_db(s1_db, s2_db, vartheta_deg.to_radians());
    noise.validate()?;

    if let Some(p) = &measured_csv {
        if !p.exists() {
            return Err(Error::InvalidSpec(format!(
                "measured_csv does not exist: {}",
                p.display()
            )));
        }
    }
    if let Some(p) = &fit_target_csv {
        if !p.exists() {
            return Err(Error::InvalidSpec(format!(
                "fit_target_csv does not exist: {}",
                p.display()
            )));
        }
    }

    Ok(RunConfig {
        cavity,
        theta_critical,
        drive_power_w,
        branch,
        op_fraction,
        noise,
        freq_min_over_gamma,
        freq_max_over_gamma,
        points_per_decade,
        resonance_points,
        wigner_freq_over_gamma,
        wigner_resolution,
        wigner_op_fractions,
        optimize_freq_over_gamma,
        opts,
        measured_csv,
        fit_target_csv,
        mc_pole_hz,
        relaxation_pole_hz: if relaxation_raw > 0.0 {
            Some(relaxation_raw)
        } else {
            None
        },
        kappa,
        minor_offset_db,
        detection_power_w,
        phase_noise_port,
        experiment_op_fractions,
        experiment_freqs_hz,
        echo: g.echo,
    })
}

impl RunConfig {
    /// Log-spaced frequency grid in rad/s over the configured gamma range.
    pub fn frequency_grid(&self, gamma: f64) -> Vec<f64> {
        let lo = self.freq_min_over_gamma;
        let hi = self.freq_max_over_gamma;
        let n = (((hi / lo).log10() * self.points_per_decade as f64).ceil() as usize).max(1);
        (0..=n)
            .map(|i| gamma * lo * (hi / lo).powf(i as f64 / n as f64))
            .collect()
    }
}

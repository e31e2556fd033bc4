//! Command-line front end: every analysis as a subcommand, flat key=value
//! configuration, CSV/JSON emission and a manifest echoing the resolved
//! configuration.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use knlc::cavity::{
    escape_efficiency, find_critical_theta, half_bandwidth, operating_point_for_fraction,
    round_trip_time, solve_resonance_curve,
};
use knlc::engine::choose_record;
use knlc::io::{
    experiment_table_csv, resonance_curve_csv, spectrum_table_csv, to_json_pretty, wigner_grid_csv,
    write_atomic,
};
use knlc::phasespace::{
    ellipse_from_spectral, optimize_operating_point, spectral_density_at, sweep_spectrum,
    wigner_grid,
};
use knlc::pipeline::{fit_phase_noise, ingest_spectrum, run_experiment_model, PipelineConfig};
use knlc::{Error, Result};

use config::{resolve_config, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "knlc",
    about = "Kerr non-linear cavity noise simulation",
    version
)]
struct Cli {
    /// Flat key=value configuration file; omitted means all defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Output format for tabular products.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads; 0 keeps the rayon default.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Override the engine modulation ratio.
    #[arg(long, global = true)]
    mod_ratio: Option<f64>,
    /// Override the steady-state convergence tolerance.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Resonance curve of the configured cavity.
    Resonance,
    /// Squeezing spectrum at the configured operating point.
    Spectrum,
    /// Wigner-function grids at the configured operating points.
    Wigner,
    /// Operating-point optimization report.
    Optimize,
    /// Full experiment model driven by a measured input spectrum.
    Experiment,
    /// Critical Kerr coefficient report.
    Critical,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerics(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path)?,
        None => String::new(),
    };
    let overrides = Overrides {
        mod_ratio: cli.mod_ratio,
        tolerance: cli.tolerance,
    };
    let cfg = resolve_config(&text, &overrides)?;
    fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Resonance => cmd_resonance(cli, &cfg),
        Command::Spectrum => cmd_spectrum(cli, &cfg),
        Command::Wigner => cmd_wigner(cli, &cfg),
        Command::Optimize => cmd_optimize(cli, &cfg),
        Command::Experiment => cmd_experiment(cli, &cfg),
        Command::Critical => cmd_critical(cli, &cfg),
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config: BTreeMap<String, String>,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Value::is_null")]
    details: Value,
}

fn write_manifest(cli: &Cli, cfg: &RunConfig, command: &str, outputs: Vec<String>, details: Value) -> Result<()> {
    let manifest = Manifest {
        command: command.into(),
        config: cfg.echo.clone(),
        outputs,
        details,
    };
    let path = cli.out.join(format!("{command}_manifest.json"));
    write_atomic(&path, to_json_pretty(&manifest)?.as_bytes())
}

fn write_product<T: Serialize>(
    cli: &Cli,
    stem: &str,
    csv_body: &str,
    json_value: &T,
) -> Result<String> {
    let name = match cli.format {
        Format::Csv => format!("{stem}.csv"),
        Format::Json => format!("{stem}.json"),
    };
    let path = cli.out.join(&name);
    match cli.format {
        Format::Csv => write_atomic(&path, csv_body.as_bytes())?,
        Format::Json => write_atomic(&path, to_json_pretty(json_value)?.as_bytes())?,
    }
    Ok(name)
}

fn fraction_tag(fraction: f64) -> String {
    format!("{fraction:.4}").replace('.', "p")
}

fn cmd_resonance(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let p_res = cfg.cavity.resonant_power(cfg.drive_power_w);
    let n = cfg.resonance_points;
    let grid: Vec<f64> = (1..=n).map(|i| p_res * i as f64 / n as f64).collect();
    let curve = solve_resonance_curve(&cfg.cavity, cfg.drive_power_w, &grid)?;
    let name = write_product(cli, "resonance", &resonance_curve_csv(&curve), &curve)?;
    let details = json!({
        "resonant_power_w": curve.resonant_power,
        "gamma_rad_s": half_bandwidth(&cfg.cavity),
        "skipped_powers_w": curve.skipped,
    });
    write_manifest(cli, cfg, "resonance", vec![name], details)
}

fn cmd_spectrum(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let gamma = half_bandwidth(&cfg.cavity);
    let op = operating_point_for_fraction(
        &cfg.cavity,
        cfg.drive_power_w,
        cfg.op_fraction,
        cfg.branch,
    )?;
    let grid = cfg.frequency_grid(gamma);
    let table = sweep_spectrum(&cfg.cavity, &op, &cfg.noise, &grid, &cfg.opts)?;
    let name = write_product(cli, "spectrum", &spectrum_table_csv(&table), &table)?;
    let snapped: Vec<f64> = table.rows.iter().map(|r| r.omega).collect();
    let details = json!({
        "gamma_rad_s": gamma,
        "escape_efficiency": escape_efficiency(&cfg.cavity)?,
        "snapped_omegas_rad_s": snapped,
    });
    write_manifest(cli, cfg, "spectrum", vec![name], details)
}

fn cmd_wigner(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let gamma = half_bandwidth(&cfg.cavity);
    let t_rt = round_trip_time(&cfg.cavity);
    let snapped = choose_record(cfg.wigner_freq_over_gamma * gamma, t_rt, 8)?;
    let mut outputs = Vec::new();
    let mut tiles = Vec::new();
    for &fraction in &cfg.wigner_op_fractions {
        let op =
            operating_point_for_fraction(&cfg.cavity, cfg.drive_power_w, fraction, cfg.branch)?;
        let s = spectral_density_at(&cfg.cavity, &op, &cfg.noise, &snapped, &cfg.opts)?;
        let ellipse = ellipse_from_spectral(&s);
        let sigma = (ellipse.var_max / 2.0).sqrt();
        let grid = wigner_grid(&ellipse, 6.0 * sigma, cfg.wigner_resolution)?;
        let stem = format!("wigner_op{}", fraction_tag(fraction));
        let name = write_product(cli, &stem, &wigner_grid_csv(&grid), &grid)?;
        outputs.push(name);
        tiles.push(json!({
            "power_fraction": fraction,
            "ellipse": ellipse,
            "bound": grid.bound,
        }));
    }
    let details = json!({
        "gamma_rad_s": gamma,
        "omega_rad_s": snapped.omega,
        "tiles": tiles,
    });
    write_manifest(cli, cfg, "wigner", outputs, details)
}

fn cmd_optimize(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let gamma = half_bandwidth(&cfg.cavity);
    let outcome = optimize_operating_point(
        &cfg.cavity,
        cfg.drive_power_w,
        &cfg.noise,
        cfg.optimize_freq_over_gamma * gamma,
        &cfg.opts,
    )?;
    let name = "optimize.json".to_string();
    write_atomic(&cli.out.join(&name), to_json_pretty(&outcome)?.as_bytes())?;
    let details = json!({
        "gamma_rad_s": gamma,
        "best_power_fraction": outcome.op.power_fraction,
        "crossings": outcome.crossings,
        "fell_back_to_critical": outcome.fell_back_to_critical,
    });
    write_manifest(cli, cfg, "optimize", vec![name], details)
}

fn cmd_experiment(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let measured_path = cfg.measured_csv.as_ref().ok_or_else(|| {
        Error::InvalidSpec("the experiment subcommand requires measured_csv in the config".into())
    })?;
    let meas = ingest_spectrum(&fs::read_to_string(measured_path)?, &measured_path.display().to_string())?;
    let mut pipeline = PipelineConfig {
        cavity: cfg.cavity,
        drive_power: cfg.drive_power_w,
        vartheta: cfg.noise.vartheta,
        minor_offset_db: cfg.minor_offset_db,
        mc_pole_hz: cfg.mc_pole_hz,
        relaxation_pole_hz: cfg.relaxation_pole_hz,
        kappa: cfg.kappa,
        phase_noise_port: cfg.phase_noise_port,
        detection_power: cfg.detection_power_w,
        op_fractions: cfg.experiment_op_fractions.clone(),
        freqs_hz: cfg.experiment_freqs_hz.clone(),
    };
    let mut fit = None;
    if let Some(target_path) = &cfg.fit_target_csv {
        let target = ingest_spectrum(
            &fs::read_to_string(target_path)?,
            &target_path.display().to_string(),
        )?;
        let result = fit_phase_noise(&pipeline, &meas, &target, &cfg.opts)?;
        pipeline.kappa = result.kappa;
        fit = Some(result);
    }
    let out = run_experiment_model(&pipeline, &meas, &cfg.opts)?;
    let mut outputs = Vec::new();
    for table in &out.tables {
        let stem = format!("experiment_op{}", fraction_tag(table.power_fraction));
        outputs.push(write_product(cli, &stem, &experiment_table_csv(table), table)?);
    }
    let details = json!({
        "peak_input_db": out.peak_input_db,
        "kappa": out.kappa,
        "fit": fit,
        "attenuation": pipeline.attenuation(),
        "escape_efficiency": escape_efficiency(&cfg.cavity)?,
    });
    write_manifest(cli, cfg, "experiment", outputs, details)
}

fn cmd_critical(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let bare = cfg.cavity.with_theta(0.0)?;
    let crit = find_critical_theta(&bare, cfg.drive_power_w)?;
    let critical_cavity = bare.with_theta(crit.theta)?;
    let op = operating_point_for_fraction(
        &critical_cavity,
        cfg.drive_power_w,
        crit.power_fraction,
        cfg.branch,
    )?;
    let name = "critical.json".to_string();
    let report = json!({
        "critical_point": crit,
        "operating_point": op,
        "gamma_rad_s": half_bandwidth(&critical_cavity),
        "resonant_power_w": critical_cavity.resonant_power(cfg.drive_power_w),
        // true when the run config already resolved theta to this value
        "config_at_critical_theta": cfg.theta_critical,
    });
    write_atomic(&cli.out.join(&name), to_json_pretty(&report)?.as_bytes())?;
    let details = json!({
        "theta_rad_per_w": crit.theta,
        "power_fraction": crit.power_fraction,
    });
    write_manifest(cli, cfg, "critical", vec![name], details)
}

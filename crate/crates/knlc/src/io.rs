//! Serialization of analysis products: CSV and JSON writers for spectra and
//! resonance curves, a flat binary format with JSON sidecar for Wigner
//! grids, and atomic file writes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cavity::ResonanceCurve;
use crate::error::{Error, Result};
use crate::phasespace::{NoiseEllipse, SpectrumTable, WignerGrid};
use crate::pipeline::ExperimentTable;

/// Writes bytes to a path atomically: the data goes to a temporary file in
/// the same directory which is then renamed over the target, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(
        ".{}.tmp.{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Pretty-printed JSON for any serializable product.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))
}

/// CSV body for a squeezing spectrum.
pub fn spectrum_table_csv(table: &SpectrumTable) -> String {
    let mut out =
        String::from("omega_over_gamma,omega_rad_s,s11,s22,s12,angle_min_deg,min_noise\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            r.omega_over_gamma, r.omega, r.s11, r.s22, r.s12, r.angle_min_deg, r.min_noise
        ));
    }
    out
}

/// CSV body for a resonance curve.
pub fn resonance_curve_csv(curve: &ResonanceCurve) -> String {
    let mut out = String::from("phi_rad,intracavity_power_w,field_phase_rad,branch\n");
    for s in &curve.samples {
        out.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{:?}\n",
            s.phi, s.power, s.phase, s.branch
        ));
    }
    out
}

/// CSV body for one experiment-model table.
pub fn experiment_table_csv(table: &ExperimentTable) -> String {
    let mut out = String::from("frequency_hz,input_db,output_db,reduction_db\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{:.12e}\n",
            r.freq_hz, r.input_db, r.output_db, r.reduction_db
        ));
    }
    out
}

/// CSV body for a Wigner grid: one `(x1, x2, value)` row per sample.
pub fn wigner_grid_csv(grid: &WignerGrid) -> String {
    let mut out = String::from("x1,x2,value\n");
    let n = grid.resolution;
    for j in 0..n {
        let x2 = sample_coord(grid.bound, n, j);
        for i in 0..n {
            let x1 = sample_coord(grid.bound, n, i);
            out.push_str(&format!(
                "{:.9e},{:.9e},{:.12e}\n",
                x1,
                x2,
                grid.values[j * n + i]
            ));
        }
    }
    out
}

fn sample_coord(bound: f64, n: usize, i: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        -bound + 2.0 * bound * i as f64 / (n - 1) as f64
    }
}

/// Metadata sidecar stored next to a binary Wigner grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerSidecar {
    pub resolution: usize,
    pub bound: f64,
    pub ellipse: NoiseEllipse,
    /// Always "f64-le-row-major".
    pub layout: String,
}

/// Writes a Wigner grid as flat little-endian f64 values in row-major order
/// plus a `<path>.json` sidecar describing the layout. Both writes are
/// atomic.
pub fn write_wigner_binary(path: &Path, grid: &WignerGrid) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.values.len() * 8);
    for v in &grid.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let sidecar = WignerSidecar {
        resolution: grid.resolution,
        bound: grid.bound,
        ellipse: grid.ellipse,
        layout: "f64-le-row-major".into(),
    };
    let sidecar_path = sidecar_path(path);
    write_atomic(&sidecar_path, to_json_pretty(&sidecar)?.as_bytes())?;
    Ok(())
}

/// Reads a grid written by [`write_wigner_binary`].
pub fn read_wigner_binary(path: &Path) -> Result<WignerGrid> {
    let sidecar_text = fs::read_to_string(sidecar_path(path))?;
    let sidecar: WignerSidecar = serde_json::from_str(&sidecar_text)
        .map_err(|e| Error::InvalidInput(format!("bad Wigner sidecar: {e}")))?;
    if sidecar.layout != "f64-le-row-major" {
        return Err(Error::InvalidInput(format!(
            "unsupported Wigner layout {:?}",
            sidecar.layout
        )));
    }
    let bytes = fs::read(path)?;
    let expected = sidecar.resolution * sidecar.resolution * 8;
    if bytes.len() != expected {
        return Err(Error::InvalidInput(format!(
            "Wigner grid has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(WignerGrid {
        values,
        resolution: sidecar.resolution,
        bound: sidecar.bound,
        ellipse: sidecar.ellipse,
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

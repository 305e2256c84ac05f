//! Output files: per-step CSV logs, the energy profile and JSON summaries.

use std::path::Path;

use cbf_shield::{AuditReport, EnergyProfile, KlReport, TrajectoryRecord};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Column order of the per-step log.
pub const STEP_COLUMNS: [&str; 8] = ["k", "t", "h", "h_tilde", "epsilon", "u_norm_sq", "g", "qp_status"];

/// Run-level numbers written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min_h_tilde: f64,
    pub final_h: f64,
    /// Mean over paths of `Σ_k ‖u_k‖²Δt`.
    pub total_energy: f64,
    pub kl_estimate: f64,
    pub kl_stderr: f64,
    /// Paths whose final sample has `h < 0`.
    pub violations: usize,
    pub energy_first_half_fraction: Option<f64>,
    pub wall_ms: f64,
}

impl Summary {
    pub fn from_records(records: &[TrajectoryRecord], audit: &AuditReport, kl: &KlReport, wall_ms: f64) -> Self {
        let n = records.len().max(1) as f64;
        Self {
            min_h_tilde: records.iter().map(|r| r.summary.min_h_tilde).fold(f64::INFINITY, f64::min),
            final_h: records.iter().map(|r| r.summary.final_h).fold(f64::INFINITY, f64::min),
            total_energy: records.iter().map(|r| r.summary.total_energy).sum::<f64>() / n,
            kl_estimate: kl.estimate,
            kl_stderr: kl.stderr,
            violations: audit.final_violations,
            energy_first_half_fraction: audit.energy_first_half_fraction,
            wall_ms,
        }
    }
}

/// Writes the step logs of `records`, one after another, under a single
/// header. Floats use the shortest representation that parses back exactly.
pub fn emit_csv(records: &[TrajectoryRecord], path: &Path) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(STEP_COLUMNS)?;
    for r in records {
        for s in &r.steps {
            wtr.write_record([
                s.k.to_string(),
                s.t.to_string(),
                s.h.to_string(),
                s.h_tilde.to_string(),
                s.epsilon.to_string(),
                s.u_norm_sq.to_string(),
                s.g.to_string(),
                s.status.as_str().to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn emit_profile(profile: &EnergyProfile, path: &Path) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["t", "mean_u_norm_sq"])?;
    for (t, e) in profile.times.iter().zip(&profile.mean_u_norm_sq) {
        wtr.write_record([t.to_string(), e.to_string()])?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn emit_summary(summary: &Summary, path: &Path) -> Result<(), CliError> {
    emit_json(summary, path)
}

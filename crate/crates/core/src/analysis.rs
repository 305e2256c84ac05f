//! Post-processing of sampled trajectories: Girsanov KL, tube audits,
//! control-energy profiles and violation counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barriers::{Barrier, BarrierError, SmoothnessParams};
use crate::constriction::{constricting_barrier, ConstrictionError};
use crate::shield::TrajectoryRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("control applied on a step with zero sampling noise; the Girsanov estimate is undefined")]
    ZeroNoiseSchedule,
    #[error("path {path} carries no states to audit")]
    MissingStates { path: usize },
    #[error("records disagree on step count")]
    InconsistentRecords,
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Constriction(#[from] ConstrictionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlRegime {
    /// `½E Σ ‖u‖²/g² Δt`, a KL bound between path measures.
    Girsanov,
    /// Deterministic sampling: `½E Σ ‖u‖² Δt`, the L² drift perturbation.
    L2Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Mean of `‖u_k‖²/g(t_k)²` across paths, `k = K, …, 1`.
    pub per_step_mean_integrand: Vec<f64>,
    pub regime: KlRegime,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn step_count(records: &[TrajectoryRecord]) -> Result<usize, AnalysisError> {
    let k = records.first().map_or(0, |r| r.control_steps().len());
    if records.iter().any(|r| r.control_steps().len() != k) {
        return Err(AnalysisError::InconsistentRecords);
    }
    Ok(k)
}

fn kl_report(records: &[TrajectoryRecord], regime: KlRegime) -> Result<KlReport, AnalysisError> {
    let steps = step_count(records)?;
    let per_path: Vec<f64> = records
        .iter()
        .map(|r| match regime {
            KlRegime::Girsanov => 0.5 * r.summary.kl_integrand,
            KlRegime::L2Energy => 0.5 * r.summary.total_energy,
        })
        .collect();
    let (estimate, stderr) = mean_stderr(&per_path);
    let mut per_step = vec![0.0; steps];
    for r in records {
        for (acc, s) in per_step.iter_mut().zip(r.control_steps()) {
            let w = match regime {
                KlRegime::Girsanov if s.g > 0.0 => s.u_norm_sq / (s.g * s.g),
                KlRegime::Girsanov => 0.0,
                KlRegime::L2Energy => s.u_norm_sq,
            };
            *acc += w;
        }
    }
    if !records.is_empty() {
        for v in &mut per_step {
            *v /= records.len() as f64;
        }
    }
    Ok(KlReport { estimate, stderr, n_paths: records.len(), per_step_mean_integrand: per_step, regime })
}

/// `½·mean_paths Σ_k ‖u_k‖²/g(t_k)²·Δt` with its Monte-Carlo standard
/// error. Uses the noise scale logged at each step, so deterministic runs
/// that applied any control are rejected.
pub fn kl_girsanov_estimate(records: &[TrajectoryRecord]) -> Result<KlReport, AnalysisError> {
    if records.iter().any(|r| r.summary.zero_noise_control) {
        return Err(AnalysisError::ZeroNoiseSchedule);
    }
    kl_report(records, KlRegime::Girsanov)
}

/// Girsanov estimate when defined, otherwise the flagged L² energy.
pub fn kl_or_energy(records: &[TrajectoryRecord]) -> Result<KlReport, AnalysisError> {
    match kl_girsanov_estimate(records) {
        Err(AnalysisError::ZeroNoiseSchedule) => kl_report(records, KlRegime::L2Energy),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAudit {
    pub path: usize,
    pub min_h_tilde: f64,
    pub final_h: f64,
    pub tube_violation: bool,
    pub final_violation: bool,
    /// Largest gap between the recomputed and the logged `h̃`.
    pub log_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub paths: Vec<PathAudit>,
    /// Paths whose `h̃` fell below the tolerance at some step.
    pub tube_violations: usize,
    /// Paths whose final sample has `h < 0`.
    pub final_violations: usize,
    pub violation_fraction: f64,
    pub energy_first_half_fraction: Option<f64>,
}

impl AuditReport {
    pub fn min_h_tilde(&self) -> f64 {
        self.paths.iter().map(|p| p.min_h_tilde).fold(f64::INFINITY, f64::min)
    }

    pub fn min_final_h(&self) -> f64 {
        self.paths.iter().map(|p| p.final_h).fold(f64::INFINITY, f64::min)
    }

    pub fn max_log_discrepancy(&self) -> f64 {
        self.paths.iter().map(|p| p.log_discrepancy).fold(0.0, f64::max)
    }
}

/// Re-evaluates `h̃(x_k, t_k)` from the stored states and each path's own
/// schedules, independent of the sampler's log.
pub fn invariance_audit(
    records: &[TrajectoryRecord],
    barrier: &Barrier,
    tolerance: f64,
) -> Result<AuditReport, AnalysisError> {
    let mut paths = Vec::with_capacity(records.len());
    for r in records {
        if r.states.len() != r.steps.len() {
            return Err(AnalysisError::MissingStates { path: r.path });
        }
        let horizon = r.schedules.first().map_or(0.0, |s| s.horizon);
        let steps = r.steps.len() - 1;
        let mut min_h_tilde = f64::INFINITY;
        let mut log_discrepancy: f64 = 0.0;
        for (i, (x, log)) in r.states.iter().zip(&r.steps).enumerate() {
            let k = steps - i;
            let t = horizon * (k as f64 / steps as f64);
            let rows = constricting_barrier(barrier, &r.schedules, x, t)?;
            let h_tilde = rows.iter().map(|row| row.h_tilde).fold(f64::INFINITY, f64::min);
            min_h_tilde = min_h_tilde.min(h_tilde);
            log_discrepancy = log_discrepancy.max((h_tilde - log.h_tilde).abs());
        }
        let final_h = barrier.value(r.states.last().expect("at least one state"))?;
        paths.push(PathAudit {
            path: r.path,
            min_h_tilde,
            final_h,
            tube_violation: min_h_tilde < -tolerance,
            final_violation: final_h < 0.0,
            log_discrepancy,
        });
    }
    let tube_violations = paths.iter().filter(|p| p.tube_violation).count();
    let final_violations = paths.iter().filter(|p| p.final_violation).count();
    let violation_fraction = if paths.is_empty() { 0.0 } else { final_violations as f64 / paths.len() as f64 };
    let energy_first_half_fraction =
        if records.is_empty() { None } else { energy_profile(records)?.first_half_fraction };
    Ok(AuditReport { paths, tube_violations, final_violations, violation_fraction, energy_first_half_fraction })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    /// `t_k` for `k = K, …, 1`.
    pub times: Vec<f64>,
    /// Mean `‖u_k‖²` across paths.
    pub mean_u_norm_sq: Vec<f64>,
    /// Share of total control energy spent on steps inside `[T/2, T]`
    /// (the start of sampling); `None` when no control was applied.
    pub first_half_fraction: Option<f64>,
}

pub fn energy_profile(records: &[TrajectoryRecord]) -> Result<EnergyProfile, AnalysisError> {
    let steps = step_count(records)?;
    let Some(first) = records.first() else {
        return Ok(EnergyProfile { times: vec![], mean_u_norm_sq: vec![], first_half_fraction: None });
    };
    let times: Vec<f64> = first.control_steps().iter().map(|s| s.t).collect();
    let mut mean = vec![0.0; steps];
    for r in records {
        for (acc, s) in mean.iter_mut().zip(r.control_steps()) {
            *acc += s.u_norm_sq;
        }
    }
    for v in &mut mean {
        *v /= records.len() as f64;
    }
    let horizon = times.first().copied().unwrap_or(0.0);
    let dt = first.dt;
    let total: f64 = mean.iter().sum();
    // Step k spans [t_k − Δt, t_k]; it counts toward the early half when the
    // whole interval lies in [T/2, T].
    let early: f64 =
        times.iter().zip(&mean).filter(|(t, _)| *t - dt >= 0.5 * horizon - 1e-12 * horizon).map(|(_, e)| e).sum();
    let first_half_fraction = if total > 0.0 { Some(early / total) } else { None };
    Ok(EnergyProfile { times, mean_u_norm_sq: mean, first_half_fraction })
}

/// Number of sequences with `h(x) < 0` under the smoothness barrier.
pub fn smoothness_violations(sequences: &[Vec<f64>], params: &SmoothnessParams) -> Result<usize, AnalysisError> {
    let mut count = 0;
    for x in sequences {
        if x.len() != params.dim() {
            return Err(BarrierError::DimensionMismatch { expected: params.dim(), got: x.len() }.into());
        }
        if params.value(x) < 0.0 {
            count += 1;
        }
    }
    Ok(count)
}

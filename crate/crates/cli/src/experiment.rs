//! Builds oracles and barriers from a config, runs the sampler and its
//! baselines, and writes the output directory.

use std::path::Path;
use std::time::Instant;

use cbf_shield::{
    energy_profile, invariance_audit, kl_or_energy, lorenz_dataset, smoothness_violations, AuditReport, Barrier,
    BarrierSpec, DriftField, DriftKind, GaussianMixture, Guidance, KlReport, NoiseMode, ScoreDrift, Shield,
    TrajectoryRecord, ZeroDrift,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checks::{qp_check, KL_RELATIVE_TOLERANCE};
use crate::config::{Experiment, ExperimentConfig, OracleSpec};
use crate::data::{random_images, read_dataset_csv, smooth_action_dataset};
use crate::emit::{emit_csv, emit_json, emit_profile, emit_summary, Summary};
use crate::CliError;

/// Slack on `h̃` the auditor accepts before flagging a path.
pub const AUDIT_TOLERANCE: f64 = 1e-6;
/// Per-path CSV logs are written for at most this many paths.
pub const MAX_PATH_LOGS: usize = 32;

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

/// Training points behind an empirical-score oracle, if any.
pub fn oracle_data(cfg: &ExperimentConfig) -> Result<Option<Vec<Vec<f64>>>, CliError> {
    Ok(match cfg.oracle.as_ref().ok_or_else(|| invalid("no oracle"))? {
        OracleSpec::Lorenz { params, count, data_seed } => {
            Some(lorenz_dataset(params, *count, *data_seed).map_err(invalid)?)
        }
        OracleSpec::Dataset { path } => Some(read_dataset_csv(path)?),
        OracleSpec::SmoothActions { count, horizon, action_dim, dt, data_seed } => {
            Some(smooth_action_dataset(*count, *horizon, *action_dim, *dt, *data_seed))
        }
        OracleSpec::RandomImages { count, height, width, data_seed, .. } => {
            Some(random_images(*count, *height, *width, *data_seed))
        }
        OracleSpec::Mixture { .. } | OracleSpec::Zero { .. } => None,
    })
}

/// Drift field for the config; probability flow when sampling is deterministic.
pub fn build_drift(cfg: &ExperimentConfig, data: Option<Vec<Vec<f64>>>) -> Result<Box<dyn DriftField>, CliError> {
    let kind = match cfg.noise_mode() {
        NoiseMode::Stochastic => DriftKind::ReverseSde,
        NoiseMode::Deterministic => DriftKind::ProbabilityFlow,
    };
    let mixture = match (cfg.oracle.as_ref(), data) {
        (Some(OracleSpec::Zero { dim }), _) => return Ok(Box::new(ZeroDrift { dim: *dim })),
        (Some(OracleSpec::Mixture { weights, means, stds }), _) => {
            GaussianMixture::new(weights.clone(), means.clone(), stds.clone()).map_err(invalid)?
        }
        (Some(OracleSpec::RandomImages { std, .. }), Some(points)) => {
            let n = points.len();
            GaussianMixture::new(vec![1.0; n], points, vec![*std; n]).map_err(invalid)?
        }
        (_, Some(points)) => GaussianMixture::empirical(points).map_err(invalid)?,
        _ => return Err(invalid("oracle has no data")),
    };
    Ok(Box::new(ScoreDrift::new(mixture, cfg.noise_schedule()?, kind, cfg.drift_scaling)))
}

pub fn build_barrier(cfg: &ExperimentConfig) -> Result<Barrier, CliError> {
    cfg.barrier.as_ref().ok_or_else(|| invalid("no barrier"))?.compile().map_err(invalid)
}

/// `Σ_paths Σ_k ‖a_k − b_k‖` over paired records.
pub fn displacement(a: &[TrajectoryRecord], b: &[TrajectoryRecord]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.states.iter().zip(&rb.states))
        .map(|(xa, xb)| xa.iter().zip(xb).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
        .sum()
}

/// Guided records plus the analyses written next to them.
#[derive(Debug, Clone)]
pub struct Arm {
    pub records: Vec<TrajectoryRecord>,
    pub audit: AuditReport,
    pub kl: KlReport,
    pub summary: Summary,
}

impl Arm {
    fn new(records: Vec<TrajectoryRecord>, barrier: &Barrier, started: Instant) -> Result<Self, CliError> {
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let audit = invariance_audit(&records, barrier, AUDIT_TOLERANCE)?;
        let kl = kl_or_energy(&records)?;
        let summary = Summary::from_records(&records, &audit, &kl, wall_ms);
        Ok(Self { records, audit, kl, summary })
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub config: ExperimentConfig,
    /// `None` for `qp-check`, which samples nothing.
    pub guided: Option<Arm>,
    pub unconstrained: Option<Arm>,
    pub projection: Option<Arm>,
    /// Extra diagnostics for `report.json`.
    pub report: serde_json::Value,
    pub passed: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BaselineReport {
    summary: Summary,
    tube_violations: usize,
    displacement_from_unconstrained: Option<f64>,
}

/// Runs everything the config asks for. Nothing is written to disk.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut cfg = cfg.clone();
    cfg.resolve();
    cfg.validate()?;
    if cfg.experiment == Experiment::QpCheck {
        let n = cfg.n_paths();
        let r = qp_check(n, (n / 5).max(1), cfg.seed)?;
        return Ok(Outcome {
            passed: r.passed,
            report: serde_json::to_value(&r).map_err(invalid)?,
            config: cfg,
            guided: None,
            unconstrained: None,
            projection: None,
            warnings: vec![],
        });
    }

    let data = oracle_data(&cfg)?;
    let mut report = serde_json::Map::new();
    if let (Some(points), Some(BarrierSpec::Smoothness(p))) = (&data, &cfg.barrier) {
        report.insert("dataset_violations".into(), json!(smoothness_violations(points, p)?));
    }
    let barrier = build_barrier(&cfg)?;
    if let Some(points) = &data {
        if points.iter().any(|x| x.len() != barrier.dim()) {
            return Err(invalid(format!("dataset rows do not match barrier dimension {}", barrier.dim())));
        }
    }
    let drift = build_drift(&cfg, data)?;
    let shield = Shield::new(cfg.shield_config(), &barrier, drift.as_ref(), cfg.noise_schedule()?)?;
    let n = cfg.n_paths();
    let sample = |g: &Guidance| match &cfg.initial_state {
        Some(x) => shield.sample_from(g, x, n, cfg.seed),
        None => shield.sample(g, n, cfg.seed),
    };

    let guidance = match (&cfg.experiment, &cfg.forced_control) {
        (Experiment::KlCheck, Some(u)) => Guidance::Forced(u.clone()),
        _ => Guidance::Cbf,
    };
    let started = Instant::now();
    let guided = Arm::new(sample(&guidance)?, &barrier, started)?;
    let unconstrained = if cfg.baselines.unconstrained || cfg.baselines.projection {
        let started = Instant::now();
        Some(Arm::new(sample(&Guidance::None)?, &barrier, started)?)
    } else {
        None
    };
    let projection = if cfg.baselines.projection {
        let started = Instant::now();
        Some(Arm::new(sample(&Guidance::Projection)?, &barrier, started)?)
    } else {
        None
    };

    let eps0: Vec<f64> = guided.records.iter().flat_map(|r| r.epsilon0()).collect();
    report.insert("epsilon0_max".into(), json!(eps0.iter().copied().fold(0.0, f64::max)));
    report.insert("epsilon0_mean".into(), json!(eps0.iter().sum::<f64>() / eps0.len().max(1) as f64));
    report.insert("tube_violations".into(), json!(guided.audit.tube_violations));
    report.insert("max_log_discrepancy".into(), json!(guided.audit.max_log_discrepancy()));
    report.insert("kl_regime".into(), json!(guided.kl.regime));
    if let Some(u) = &unconstrained {
        report.insert("displacement_guided".into(), json!(displacement(&guided.records, &u.records)));
        report.insert(
            "unconstrained".into(),
            serde_json::to_value(BaselineReport {
                summary: u.summary.clone(),
                tube_violations: u.audit.tube_violations,
                displacement_from_unconstrained: None,
            })
            .map_err(invalid)?,
        );
        if let Some(p) = &projection {
            report.insert(
                "projection".into(),
                serde_json::to_value(BaselineReport {
                    summary: p.summary.clone(),
                    tube_violations: p.audit.tube_violations,
                    displacement_from_unconstrained: Some(displacement(&p.records, &u.records)),
                })
                .map_err(invalid)?,
            );
        }
    }

    let mut warnings = Vec::new();
    let passed = if let Guidance::Forced(u) = &guidance {
        let g = match cfg.noise {
            Some(cbf_shield::oracles::NoiseKind::ConstantG { g }) => g,
            _ => return Err(invalid("kl-check needs constant_g noise")),
        };
        let analytic = cfg.horizon * u.iter().map(|v| v * v).sum::<f64>() / (2.0 * g * g);
        let rel = (guided.kl.estimate - analytic).abs() / analytic;
        report.insert("kl_analytic".into(), json!(analytic));
        report.insert("kl_relative_error".into(), json!(rel));
        rel <= KL_RELATIVE_TOLERANCE
    } else {
        if let Some(f) = guided.audit.energy_first_half_fraction {
            if f < 0.5 {
                warnings.push(format!("control energy in the first half of sampling is {f:.3} (< 0.5)"));
            }
        }
        guided.audit.final_violations == 0 && guided.audit.tube_violations == 0
    };

    Ok(Outcome {
        config: cfg,
        guided: Some(guided),
        unconstrained,
        projection,
        report: serde_json::Value::Object(report),
        passed,
        warnings,
    })
}

fn write_arm(arm: &Arm, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir.join("paths")).map_err(|e| CliError::io(dir, e))?;
    emit_summary(&arm.summary, &dir.join("summary.json"))?;
    emit_profile(&energy_profile(&arm.records)?, &dir.join("profile.csv"))?;
    for r in arm.records.iter().take(MAX_PATH_LOGS) {
        emit_csv(std::slice::from_ref(r), &dir.join("paths").join(format!("path_{:04}.csv", r.path)))?;
    }
    Ok(())
}

/// Writes `summary.json`, `report.json`, `profile.csv`, `config.json` and
/// per-path logs; baselines go in subdirectories of the same layout.
pub fn write_outputs(outcome: &Outcome, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    emit_json(&outcome.config, &dir.join("config.json"))?;
    emit_json(&outcome.report, &dir.join("report.json"))?;
    if let Some(arm) = &outcome.guided {
        write_arm(arm, dir)?;
    }
    if let Some(arm) = &outcome.unconstrained {
        write_arm(arm, &dir.join("unconstrained"))?;
    }
    if let Some(arm) = &outcome.projection {
        write_arm(arm, &dir.join("projection"))?;
    }
    Ok(())
}

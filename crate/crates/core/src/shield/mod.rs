//! The safety filter: discrete CBF rows, the min-norm QP, the guided
//! Euler–Maruyama sampler and the projection baseline.

mod projection;
mod qp;
mod sampler;

pub use projection::projection_step;
pub use qp::{
    solve_min_norm, QpInstance, QpSolution, QpStatus, SolverKind, DUAL_MAX_ITERATIONS, DUAL_TOLERANCE,
    FEASIBILITY_TOLERANCE,
};
pub use sampler::{Guidance, Shield, StepLog, TrajectoryRecord, TrajectorySummary};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barriers::{BarrierError, SparseRow};
use crate::constriction::{ConstrictionError, ScheduleKind};
use crate::oracles::OracleError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShieldError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("barrier gradient vanished on a violated row {row} (b = {b})")]
    GradientDegenerate { row: usize, b: f64 },
    #[error("dual ascent did not converge after {iterations} iterations")]
    DualNonConvergence { iterations: usize },
    #[error("path {path} left the tube at step {k}: h̃ = {h_tilde}")]
    TubeViolation { path: usize, k: usize, h_tilde: f64 },
    #[error("projection failed: {0}")]
    ProjectionFailed(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Constriction(#[from] ConstrictionError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Class-K damping `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassK {
    /// `γ(h) = α·h`.
    Linear { alpha: f64 },
    /// `γ(h) = α·sign(h)·|h|^exponent`.
    Power { alpha: f64, exponent: f64 },
}

impl Default for ClassK {
    fn default() -> Self {
        ClassK::Linear { alpha: 0.5 }
    }
}

impl ClassK {
    pub fn alpha(&self) -> f64 {
        match *self {
            ClassK::Linear { alpha } | ClassK::Power { alpha, .. } => alpha,
        }
    }

    pub fn eval(&self, h: f64) -> f64 {
        match *self {
            ClassK::Linear { alpha } => alpha * h,
            ClassK::Power { alpha, exponent } => alpha * h.signum() * h.abs().powf(exponent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Stochastic,
    /// Sampling noise forced to zero; pair with a probability-flow drift.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShieldConfig {
    pub horizon: f64,
    pub steps: usize,
    pub class_k: ClassK,
    pub schedule: ScheduleKind,
    pub margin: f64,
    pub noise_mode: NoiseMode,
    pub solver: SolverKind,
    /// Slack allowed on `h̃` before a run is aborted; `f64::INFINITY` turns
    /// the abort off and leaves violations to the auditor.
    pub tube_tolerance: f64,
    /// Keep every state and control in the records.
    pub keep_states: bool,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 200,
            class_k: ClassK::default(),
            schedule: ScheduleKind::Linear,
            margin: 0.1,
            noise_mode: NoiseMode::Stochastic,
            solver: SolverKind::Auto,
            tube_tolerance: 1e-6,
            keep_states: true,
        }
    }
}

impl ShieldConfig {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_k = T·k/K`, exact at both ends.
    pub fn time(&self, k: usize) -> f64 {
        self.horizon * (k as f64 / self.steps as f64)
    }

    pub fn validate(&self) -> Result<(), ShieldError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ShieldError::Config("horizon T must be positive".into()));
        }
        if self.steps == 0 {
            return Err(ShieldError::Config("step count K must be at least 1".into()));
        }
        let alpha = self.class_k.alpha();
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ShieldError::Config("alpha must be positive".into()));
        }
        if let ClassK::Power { exponent, .. } = self.class_k {
            if !(exponent.is_finite() && exponent > 0.0) {
                return Err(ShieldError::Config("class-K exponent must be positive".into()));
            }
        }
        if alpha * self.dt() >= 1.0 {
            return Err(ShieldError::Config(format!("alpha * dt = {} must be below 1", alpha * self.dt())));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(ShieldError::Config("margin c must be nonnegative".into()));
        }
        if self.tube_tolerance.is_nan() || self.tube_tolerance < 0.0 {
            return Err(ShieldError::Config("tube tolerance must be nonnegative".into()));
        }
        self.schedule.validate()?;
        Ok(())
    }
}

/// Discrete CBF row in normal form `a·u ≤ b` with `a = ∇h̃` and
/// `b = γ(h̃) − a·f + a·d_noise/Δt − ∂ε/∂t`.
pub fn assemble_constraint(
    h_tilde: f64,
    grad: &SparseRow,
    f: &[f64],
    d_noise: &[f64],
    eps_dt: f64,
    class_k: &ClassK,
    dt: f64,
) -> (SparseRow, f64) {
    let b = class_k.eval(h_tilde) - grad.dot(f) + grad.dot(d_noise) / dt - eps_dt;
    (grad.clone(), b)
}

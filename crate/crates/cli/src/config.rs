//! Experiment configuration: strict JSON with per-experiment defaults.

use std::path::{Path, PathBuf};

use cbf_shield::barriers::{HalfspaceParams, ImageShape, PhysicsResidualParams, PixelPatchParams, PixelRegion};
use cbf_shield::oracles::{DriftScaling, NoiseKind, NoiseSchedule};
use cbf_shield::shield::{ClassK, NoiseMode, ShieldConfig, SolverKind};
use cbf_shield::{BarrierSpec, LorenzParams, ScheduleKind, SmoothnessParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Gmm,
    Lorenz,
    Smooth,
    Pixels,
    KlCheck,
    QpCheck,
}

/// Where the drift field comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    /// Gaussian mixture with exact score.
    Mixture { weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64> },
    /// Empirical score over Euler-integrated Lorenz trajectories.
    Lorenz {
        #[serde(default)]
        params: LorenzParams,
        #[serde(default = "default_lorenz_count")]
        count: usize,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
    /// Empirical score over rows of a CSV file with a header line.
    Dataset { path: PathBuf },
    /// Empirical score over synthetic sinusoidal action sequences.
    SmoothActions {
        #[serde(default = "default_smooth_count")]
        count: usize,
        #[serde(default = "default_smooth_horizon")]
        horizon: usize,
        #[serde(default = "default_action_dim")]
        action_dim: usize,
        #[serde(default = "default_action_dt")]
        dt: f64,
        #[serde(default = "default_smooth_seed")]
        data_seed: u64,
    },
    /// Equal-weight mixture centred on uniformly random images in `[−1, 1]`,
    /// each component with standard deviation `std`.
    RandomImages {
        count: usize,
        height: usize,
        width: usize,
        #[serde(default = "default_image_std")]
        std: f64,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
    /// `f ≡ 0`.
    Zero { dim: usize },
}

fn default_lorenz_count() -> usize {
    64
}
fn default_smooth_count() -> usize {
    200
}
fn default_smooth_horizon() -> usize {
    15
}
fn default_action_dim() -> usize {
    2
}
fn default_action_dt() -> f64 {
    0.1
}
fn default_data_seed() -> u64 {
    1
}
fn default_smooth_seed() -> u64 {
    5
}
fn default_image_std() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Baselines {
    pub unconstrained: bool,
    pub projection: bool,
}

fn default_horizon() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.5
}
fn default_tube_tolerance() -> f64 {
    1e-6
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("shield-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// When set, `γ(h) = α·sign(h)·|h|^exponent` instead of `α·h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_k_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_mode: Option<NoiseMode>,
    #[serde(default)]
    pub drift_scaling: DriftScaling,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default = "default_tube_tolerance")]
    pub tube_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierSpec>,
    #[serde(default)]
    pub baselines: Baselines,
    /// Constant control for `kl-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_control: Option<Vec<f64>>,
    /// Fixed `x_T` for every path instead of `N(0, I)` draws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn gmm_oracle() -> OracleSpec {
    OracleSpec::Mixture { weights: vec![0.5, 0.5], means: vec![vec![-2.0, 0.0], vec![2.0, 0.0]], stds: vec![0.5, 0.5] }
}

fn image_shape() -> ImageShape {
    ImageShape { height: 16, width: 16 }
}

impl ExperimentConfig {
    /// Minimal config for an experiment; every optional field unset.
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            seed: 0,
            n_paths: None,
            horizon: default_horizon(),
            steps: None,
            alpha: default_alpha(),
            class_k_exponent: None,
            margin: None,
            schedule: None,
            noise: None,
            noise_mode: None,
            drift_scaling: DriftScaling::default(),
            solver: SolverKind::default(),
            tube_tolerance: default_tube_tolerance(),
            oracle: None,
            barrier: None,
            baselines: Baselines::default(),
            forced_control: None,
            initial_state: None,
            output_dir: default_output_dir(),
        }
    }

    /// Fills experiment-dependent defaults. Idempotent.
    pub fn resolve(&mut self) {
        let exp = self.experiment;
        if self.n_paths.is_none() {
            self.n_paths = Some(match exp {
                Experiment::Gmm => 1000,
                Experiment::Lorenz => 20,
                Experiment::Smooth => 100,
                Experiment::Pixels => 16,
                Experiment::KlCheck => 10_000,
                Experiment::QpCheck => 1000,
            });
        }
        // Probability-flow sampling on a fine grid where the barrier is
        // nonlinear; stochastic steps there lose the Itô curvature term.
        let fine = matches!(exp, Experiment::Lorenz | Experiment::Smooth | Experiment::Pixels);
        if self.steps.is_none() {
            self.steps = Some(if fine { 1000 } else { 200 });
        }
        if self.noise_mode.is_none() {
            self.noise_mode = Some(if fine { NoiseMode::Deterministic } else { NoiseMode::Stochastic });
        }
        if self.schedule.is_none() {
            self.schedule = Some(match exp {
                Experiment::Pixels => ScheduleKind::Exponential { lambda: 10.0 },
                _ => ScheduleKind::Linear,
            });
        }
        if self.noise.is_none() {
            self.noise = Some(match exp {
                Experiment::KlCheck => NoiseKind::ConstantG { g: 0.5 },
                _ => NoiseKind::default(),
            });
        }
        if exp == Experiment::KlCheck && self.forced_control.is_none() {
            self.forced_control = Some(vec![1.0, 0.5]);
        }
        if self.oracle.is_none() {
            self.oracle = Some(match exp {
                Experiment::Gmm | Experiment::QpCheck => gmm_oracle(),
                Experiment::Lorenz => OracleSpec::Lorenz {
                    params: LorenzParams::default(),
                    count: default_lorenz_count(),
                    data_seed: default_data_seed(),
                },
                Experiment::Smooth => OracleSpec::SmoothActions {
                    count: default_smooth_count(),
                    horizon: default_smooth_horizon(),
                    action_dim: default_action_dim(),
                    dt: default_action_dt(),
                    data_seed: default_smooth_seed(),
                },
                Experiment::Pixels => OracleSpec::RandomImages {
                    count: 8,
                    height: image_shape().height,
                    width: image_shape().width,
                    std: default_image_std(),
                    data_seed: default_data_seed(),
                },
                Experiment::KlCheck => OracleSpec::Zero { dim: self.forced_control.as_ref().map_or(2, Vec::len) },
            });
        }
        if self.barrier.is_none() {
            self.barrier = Some(match exp {
                Experiment::Gmm | Experiment::QpCheck => {
                    BarrierSpec::Halfspace(HalfspaceParams { normal: vec![1.0, 0.0], offset: 2.0 })
                }
                Experiment::Lorenz => {
                    let params = match &self.oracle {
                        Some(OracleSpec::Lorenz { params, .. }) => *params,
                        _ => LorenzParams::default(),
                    };
                    BarrierSpec::PhysicsResidual(PhysicsResidualParams { dynamics: params, tolerance: 0.001 })
                }
                Experiment::Smooth => {
                    let (horizon, action_dim, dt) = match &self.oracle {
                        Some(OracleSpec::SmoothActions { horizon, action_dim, dt, .. }) => (*horizon, *action_dim, *dt),
                        _ => (default_smooth_horizon(), default_action_dim(), default_action_dt()),
                    };
                    BarrierSpec::Smoothness(SmoothnessParams { horizon, action_dim, dt, tolerance: 1.5 })
                }
                Experiment::Pixels => {
                    let shape = match &self.oracle {
                        Some(OracleSpec::RandomImages { height, width, .. }) => {
                            ImageShape { height: *height, width: *width }
                        }
                        _ => image_shape(),
                    };
                    BarrierSpec::PixelPatch(PixelPatchParams {
                        shape,
                        region: PixelRegion {
                            row_min: shape.height / 4,
                            row_max: (3 * shape.height / 4).saturating_sub(1),
                            col_min: shape.width / 4,
                            col_max: (3 * shape.width / 4).saturating_sub(1),
                        },
                        reference: vec![0.8, -0.8, 0.0],
                        tolerance: 0.05,
                    })
                }
                Experiment::KlCheck => {
                    // Far-away halfspace: logged only, never binding.
                    let dim = self.forced_control.as_ref().map_or(2, Vec::len);
                    let mut normal = vec![0.0; dim];
                    normal[0] = 1.0;
                    BarrierSpec::Halfspace(HalfspaceParams { normal, offset: -1e9 })
                }
            });
        }
        if self.margin.is_none() {
            let per_pixel =
                matches!(self.barrier, Some(BarrierSpec::PixelPatch(_)) | Some(BarrierSpec::ColorRegion(_)));
            self.margin = Some(if per_pixel { 0.01 } else { 0.1 });
        }
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths.unwrap_or(1)
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or(200)
    }

    pub fn noise_mode(&self) -> NoiseMode {
        self.noise_mode.unwrap_or_default()
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule, CliError> {
        NoiseSchedule::new(self.noise.unwrap_or_default(), self.horizon)
            .map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn shield_config(&self) -> ShieldConfig {
        let class_k = match self.class_k_exponent {
            Some(exponent) => ClassK::Power { alpha: self.alpha, exponent },
            None => ClassK::Linear { alpha: self.alpha },
        };
        ShieldConfig {
            horizon: self.horizon,
            steps: self.steps(),
            class_k,
            schedule: self.schedule.unwrap_or_default(),
            margin: self.margin.unwrap_or(0.1),
            noise_mode: self.noise_mode(),
            solver: self.solver,
            tube_tolerance: self.tube_tolerance,
            keep_states: true,
        }
    }

    /// Checks every numeric bound that does not need the oracle data.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.n_paths() == 0 {
            return bad("n_paths must be at least 1".into());
        }
        self.shield_config().validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.noise_schedule()?;
        let barrier = match &self.barrier {
            Some(b) => b.compile().map_err(|e| CliError::Validation(format!("barrier: {e}")))?,
            None => return bad("no barrier".into()),
        };
        match &self.oracle {
            Some(OracleSpec::Dataset { path }) => {
                if !path.is_file() {
                    return bad(format!("dataset file {} does not exist", path.display()));
                }
            }
            Some(OracleSpec::Lorenz { params, count, .. }) => {
                params.validate().map_err(|e| CliError::Validation(e.to_string()))?;
                if *count == 0 {
                    return bad("lorenz count must be at least 1".into());
                }
            }
            Some(OracleSpec::SmoothActions { count, horizon, action_dim, dt, .. }) => {
                if *count == 0 || *horizon == 0 || *action_dim == 0 || !(dt.is_finite() && *dt > 0.0) {
                    return bad("smooth_actions needs positive count, horizon, action_dim and dt".into());
                }
            }
            Some(OracleSpec::RandomImages { count, height, width, std, .. }) => {
                if *count == 0 || *height == 0 || *width == 0 || !(std.is_finite() && *std >= 0.0) {
                    return bad("random_images needs positive count, height and width and a finite std".into());
                }
            }
            Some(OracleSpec::Zero { dim }) if *dim == 0 => return bad("zero drift dimension must be positive".into()),
            Some(_) => {}
            None => return bad("no oracle".into()),
        }
        if let Some(dim) = self.oracle_dim() {
            if dim != barrier.dim() {
                return bad(format!("oracle dimension {dim} differs from barrier dimension {}", barrier.dim()));
            }
        }
        for (name, v) in [("forced_control", &self.forced_control), ("initial_state", &self.initial_state)] {
            if let Some(v) = v {
                if v.len() != barrier.dim() {
                    return bad(format!("{name} has length {}, expected {}", v.len(), barrier.dim()));
                }
                if !v.iter().all(|x| x.is_finite()) {
                    return bad(format!("{name} must be finite"));
                }
            }
        }
        if self.experiment == Experiment::KlCheck {
            if self.forced_control.is_none() {
                return bad("kl-check needs forced_control".into());
            }
            if self.noise_mode() == NoiseMode::Deterministic {
                return bad("kl-check needs stochastic sampling".into());
            }
        }
        Ok(())
    }

    /// Dimension implied by the oracle, when known without loading data.
    pub fn oracle_dim(&self) -> Option<usize> {
        match self.oracle.as_ref()? {
            OracleSpec::Mixture { means, .. } => means.first().map(Vec::len),
            OracleSpec::Lorenz { params, .. } => Some(params.state_dim()),
            OracleSpec::Dataset { .. } => None,
            OracleSpec::SmoothActions { horizon, action_dim, .. } => Some((horizon + 1) * action_dim),
            OracleSpec::RandomImages { height, width, .. } => Some(height * width * 3),
            OracleSpec::Zero { dim } => Some(*dim),
        }
    }
}

/// Parses, resolves defaults and validates a config held in memory.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(r#"{"experiment": "gmm", "seed": 7}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.horizon, 1.0);
        assert_eq!(cfg.steps, Some(200));
        assert_eq!(cfg.noise_mode, Some(NoiseMode::Stochastic));
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.margin, Some(0.1));
        assert_eq!(cfg.schedule, Some(ScheduleKind::Linear));
        assert_eq!(cfg.noise, Some(NoiseKind::VariancePreserving { beta_min: 0.1, beta_max: 20.0 }));
        assert_eq!(cfg.n_paths, Some(1000));
    }

    #[test]
    fn unstable_alpha_rejected() {
        let err = parse_config_str(r#"{"experiment": "gmm", "alpha": 200.0}"#).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)), "{err}");
    }

    #[test]
    fn unknown_key_named() {
        let err = parse_config_str("{\"experiment\": \"gmm\",\n \"gamma_margin\": 0.1}").unwrap_err();
        match err {
            CliError::Parse { line, message, .. } => {
                assert!(message.contains("gamma_margin"));
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_nested_key_rejected() {
        let text =
            r#"{"experiment": "gmm", "barrier": {"kind": "halfspace", "normal": [1, 0], "offset": 0, "slack": 1}}"#;
        assert!(matches!(parse_config_str(text), Err(CliError::Parse { .. })));
    }

    #[test]
    fn per_pixel_margin() {
        let cfg = parse_config_str(r#"{"experiment": "pixels"}"#).unwrap();
        assert_eq!(cfg.margin, Some(0.01));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let text = r#"{"experiment": "gmm", "barrier": {"kind": "ball", "center": [0, 0, 0], "radius": 1}}"#;
        assert!(matches!(parse_config_str(text), Err(CliError::Validation(_))));
    }

    #[test]
    fn missing_dataset_rejected() {
        let text = r#"{"experiment": "lorenz", "oracle": {"kind": "dataset", "path": "/nonexistent/x.csv"}}"#;
        assert!(matches!(parse_config_str(text), Err(CliError::Validation(_))));
    }

    #[test]
    fn round_trip() {
        for exp in ["gmm", "lorenz", "smooth", "pixels", "kl-check", "qp-check"] {
            let cfg = parse_config_str(&format!(r#"{{"experiment": "{exp}", "seed": 3}}"#)).unwrap();
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            assert_eq!(parse_config_str(&text).unwrap(), cfg, "{exp}");
        }
    }
}

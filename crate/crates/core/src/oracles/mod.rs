//! Training-free drift fields for the sampler.
//!
//! A Gaussian mixture noised by a linear-Gaussian forward process stays a
//! Gaussian mixture, so its score is available in closed form at every
//! noise level. Mixtures with zero component variance are exactly the
//! noised empirical distribution of a dataset, which stands in for a
//! trained denoiser.

pub mod lorenz;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("density is degenerate: every component has zero variance and x is off-support")]
    DegenerateDensity,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("count must be at least 1")]
    InvalidCount,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Shape of the diffusion coefficient `g(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    /// `g(t) = g`.
    ConstantG { g: f64 },
    /// `g(t) = g_min · (g_max/g_min)^{t/T}`.
    VarianceExploding { g_min: f64, g_max: f64 },
    /// `β(t)` linear from `beta_min` to `beta_max`, `g(t) = √β(t)`.
    VariancePreserving { beta_min: f64, beta_max: f64 },
}

impl Default for NoiseKind {
    fn default() -> Self {
        NoiseKind::VariancePreserving { beta_min: 0.1, beta_max: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: NoiseKind,
    pub horizon: f64,
}

/// Forward-noised marginal of a data point `x₀` is `N(alpha·x₀, sigma²·I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalCoefficients {
    pub alpha: f64,
    pub sigma: f64,
}

impl NoiseSchedule {
    pub fn new(kind: NoiseKind, horizon: f64) -> Result<Self, OracleError> {
        let ns = Self { kind, horizon };
        ns.validate()?;
        Ok(ns)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(OracleError::InvalidParameter("horizon must be positive".into()));
        }
        let ok = match self.kind {
            NoiseKind::ConstantG { g } => g.is_finite() && g > 0.0,
            NoiseKind::VarianceExploding { g_min, g_max } => {
                g_min.is_finite() && g_max.is_finite() && g_min > 0.0 && g_max >= g_min
            }
            NoiseKind::VariancePreserving { beta_min, beta_max } => {
                beta_min.is_finite() && beta_max.is_finite() && beta_min > 0.0 && beta_max >= beta_min
            }
        };
        if ok {
            Ok(())
        } else {
            Err(OracleError::InvalidParameter(format!("bad noise schedule {:?}", self.kind)))
        }
    }

    fn check_time(&self, t: f64) -> Result<(), OracleError> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(OracleError::TimeOutOfRange { t, horizon: self.horizon })
        }
    }

    /// Squared diffusion coefficient `g(t)²`.
    pub fn g_squared(&self, t: f64) -> f64 {
        let s = t / self.horizon;
        match self.kind {
            NoiseKind::ConstantG { g } => g * g,
            NoiseKind::VarianceExploding { g_min, g_max } => {
                let g = g_min * (g_max / g_min).powf(s);
                g * g
            }
            NoiseKind::VariancePreserving { beta_min, beta_max } => beta_min + (beta_max - beta_min) * s,
        }
    }

    pub fn g(&self, t: f64) -> f64 {
        self.g_squared(t).sqrt()
    }

    /// Closed-form marginal coefficients at time `t`.
    pub fn marginal(&self, t: f64) -> Result<MarginalCoefficients, OracleError> {
        self.check_time(t)?;
        let horizon = self.horizon;
        Ok(match self.kind {
            NoiseKind::ConstantG { g } => MarginalCoefficients { alpha: 1.0, sigma: (g * g * t).sqrt() },
            NoiseKind::VarianceExploding { g_min, g_max } => {
                let ratio = g_max / g_min;
                let var = if ratio == 1.0 {
                    g_min * g_min * t
                } else {
                    // ∫₀ᵗ g_min² r^{2s/T} ds
                    let k = 2.0 * ratio.ln() / horizon;
                    g_min * g_min * (k * t).exp_m1() / k
                };
                MarginalCoefficients { alpha: 1.0, sigma: var.sqrt() }
            }
            NoiseKind::VariancePreserving { beta_min, beta_max } => {
                let integral = beta_min * t + 0.5 * (beta_max - beta_min) * t * t / horizon;
                MarginalCoefficients { alpha: (-0.5 * integral).exp(), sigma: (-(-integral).exp_m1()).sqrt() }
            }
        })
    }

    pub fn is_variance_preserving(&self) -> bool {
        matches!(self.kind, NoiseKind::VariancePreserving { .. })
    }
}

/// Free-function form of [`NoiseSchedule::marginal`].
pub fn marginal_coeffs(ns: &NoiseSchedule, t: f64) -> Result<MarginalCoefficients, OracleError> {
    ns.marginal(t)
}

/// Isotropic Gaussian mixture. A component with zero standard deviation is
/// a point mass, so an empirical dataset is a mixture of point masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
}

impl GaussianMixture {
    /// Validates the components and normalises the weights.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self, OracleError> {
        let mut mix = Self { weights, means, stds };
        mix.validate()?;
        let total: f64 = mix.weights.iter().sum();
        for w in &mut mix.weights {
            *w /= total;
        }
        Ok(mix)
    }

    /// Uniform mixture of point masses at the given samples.
    pub fn empirical(points: Vec<Vec<f64>>) -> Result<Self, OracleError> {
        let m = points.len();
        Self::new(vec![1.0; m], points, vec![0.0; m])
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let m = self.weights.len();
        if m == 0 {
            return Err(OracleError::InvalidParameter("mixture needs at least one component".into()));
        }
        if self.means.len() != m || self.stds.len() != m {
            return Err(OracleError::InvalidParameter("weights, means and stds differ in length".into()));
        }
        let n = self.means[0].len();
        if n == 0 {
            return Err(OracleError::InvalidParameter("mixture dimension must be positive".into()));
        }
        for (i, mu) in self.means.iter().enumerate() {
            if mu.len() != n {
                return Err(OracleError::DimensionMismatch { expected: n, got: mu.len() });
            }
            if !mu.iter().all(|v| v.is_finite()) {
                return Err(OracleError::InvalidParameter(format!("mean {i} is not finite")));
            }
        }
        if !self.weights.iter().all(|&w| w.is_finite() && w > 0.0) {
            return Err(OracleError::InvalidParameter("weights must be positive".into()));
        }
        if !self.stds.iter().all(|&s| s.is_finite() && s >= 0.0) {
            return Err(OracleError::InvalidParameter("stds must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), OracleError> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(OracleError::DimensionMismatch { expected: self.dim(), got: x.len() })
        }
    }

    /// Per-component unnormalised log posterior weights at `(x, t)`, skipping
    /// point masses. Returns `(log_weights, variances)`; `log_weights[i]` is
    /// `-inf` for skipped components.
    fn component_terms(&self, m: MarginalCoefficients, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len() as f64;
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let mut logs = Vec::with_capacity(self.weights.len());
        let mut vars = Vec::with_capacity(self.weights.len());
        for ((w, mu), s) in self.weights.iter().zip(&self.means).zip(&self.stds) {
            let var = m.alpha * m.alpha * s * s + m.sigma * m.sigma;
            vars.push(var);
            if var > 0.0 {
                let d2: f64 = x.iter().zip(mu).map(|(xi, mi)| (xi - m.alpha * mi).powi(2)).sum();
                logs.push(w.ln() - 0.5 * n * (ln_2pi + var.ln()) - 0.5 * d2 / var);
            } else {
                logs.push(f64::NEG_INFINITY);
            }
        }
        (logs, vars)
    }

    fn on_point_mass(&self, m: MarginalCoefficients, x: &[f64]) -> bool {
        self.means
            .iter()
            .zip(&self.stds)
            .any(|(mu, &s)| s == 0.0 && x.iter().zip(mu).all(|(xi, mi)| *xi == m.alpha * mi))
    }

    /// `log p_t(x)` of the noised mixture.
    pub fn log_density(&self, ns: &NoiseSchedule, x: &[f64], t: f64) -> Result<f64, OracleError> {
        self.check_dim(x)?;
        let m = ns.marginal(t)?;
        let (logs, _) = self.component_terms(m, x);
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(OracleError::DegenerateDensity);
        }
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        Ok(max + sum.ln())
    }

    /// Exact score `∇ₓ log p_t(x)` with log-sum-exp stabilised posteriors.
    pub fn score(&self, ns: &NoiseSchedule, x: &[f64], t: f64) -> Result<Vec<f64>, OracleError> {
        self.check_dim(x)?;
        let m = ns.marginal(t)?;
        let (logs, vars) = self.component_terms(m, x);
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            if self.on_point_mass(m, x) {
                return Ok(vec![0.0; x.len()]);
            }
            return Err(OracleError::DegenerateDensity);
        }
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut score = vec![0.0; x.len()];
        for ((r, mu), var) in weights.iter().zip(&self.means).zip(&vars) {
            if *r == 0.0 {
                continue;
            }
            let c = r / (total * var);
            for ((s, xi), mi) in score.iter_mut().zip(x).zip(mu) {
                *s += c * (m.alpha * mi - xi);
            }
        }
        Ok(score)
    }
}

/// Free-function form of [`GaussianMixture::score`].
pub fn gmm_score(mix: &GaussianMixture, ns: &NoiseSchedule, x: &[f64], t: f64) -> Result<Vec<f64>, OracleError> {
    mix.score(ns, x, t)
}

/// How the `−½x` term of the VP drift is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftScaling {
    /// `−½β(t)x`, the standard VP reverse SDE.
    #[default]
    BetaScaled,
    /// `−½x` exactly as commonly printed for score-based models.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// `f = −½s(t)x − g²·score`, consumed with sampling noise `g(t)`.
    #[default]
    ReverseSde,
    /// `f = −½s(t)x − ½g²·score`, consumed with sampling noise forced to 0.
    ProbabilityFlow,
}

/// A drift field `f(x, t)` in the sign convention of the sampler, which
/// steps `x_{k−1} = x_k − f(x_k, t_k)Δt + …`.
pub trait DriftField: Send + Sync {
    fn dim(&self) -> usize;
    fn drift(&self, x: &[f64], t: f64) -> Result<Vec<f64>, OracleError>;
}

/// Drift built from the exact score of a [`GaussianMixture`].
#[derive(Debug, Clone)]
pub struct ScoreDrift {
    pub mixture: GaussianMixture,
    pub schedule: NoiseSchedule,
    pub kind: DriftKind,
    pub scaling: DriftScaling,
}

impl ScoreDrift {
    pub fn new(mixture: GaussianMixture, schedule: NoiseSchedule, kind: DriftKind, scaling: DriftScaling) -> Self {
        Self { mixture, schedule, kind, scaling }
    }

    fn linear_coeff(&self, t: f64) -> f64 {
        if !self.schedule.is_variance_preserving() {
            return 0.0;
        }
        match self.scaling {
            DriftScaling::BetaScaled => -0.5 * self.schedule.g_squared(t),
            DriftScaling::Literal => -0.5,
        }
    }

    fn combine(&self, x: &[f64], t: f64, score_weight: f64) -> Result<Vec<f64>, OracleError> {
        let score = self.mixture.score(&self.schedule, x, t)?;
        let lin = self.linear_coeff(t);
        let g2 = self.schedule.g_squared(t);
        Ok(x.iter().zip(&score).map(|(xi, si)| lin * xi - score_weight * g2 * si).collect())
    }
}

impl DriftField for ScoreDrift {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn drift(&self, x: &[f64], t: f64) -> Result<Vec<f64>, OracleError> {
        match self.kind {
            DriftKind::ReverseSde => self.combine(x, t, 1.0),
            DriftKind::ProbabilityFlow => self.combine(x, t, 0.5),
        }
    }
}

/// Reverse-SDE drift of a mixture.
pub fn reverse_drift(
    mix: &GaussianMixture,
    ns: &NoiseSchedule,
    x: &[f64],
    t: f64,
    scaling: DriftScaling,
) -> Result<Vec<f64>, OracleError> {
    ScoreDrift::new(mix.clone(), *ns, DriftKind::ReverseSde, scaling).drift(x, t)
}

/// Probability-flow ODE drift of a mixture.
pub fn probability_flow_drift(
    mix: &GaussianMixture,
    ns: &NoiseSchedule,
    x: &[f64],
    t: f64,
    scaling: DriftScaling,
) -> Result<Vec<f64>, OracleError> {
    ScoreDrift::new(mix.clone(), *ns, DriftKind::ProbabilityFlow, scaling).drift(x, t)
}

/// `f ≡ 0`; pure diffusion.
#[derive(Debug, Clone, Copy)]
pub struct ZeroDrift {
    pub dim: usize,
}

impl DriftField for ZeroDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64], _t: f64) -> Result<Vec<f64>, OracleError> {
        if x.len() != self.dim {
            return Err(OracleError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(vec![0.0; self.dim])
    }
}

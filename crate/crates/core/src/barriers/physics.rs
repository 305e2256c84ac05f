//! Trajectory-level barriers: Lorenz physics residual and action smoothness.

use serde::{Deserialize, Serialize};

use super::BarrierError;
use crate::oracles::lorenz::{lorenz_field, lorenz_jacobian, LorenzParams};

/// `h(x) = e − (1/L)·Σ_l ‖(z^{l+1} − z^l)/Δ_l − F(z^l)‖²` over a flattened
/// trajectory `x = [z⁰; …; z^L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsResidualParams {
    #[serde(default)]
    pub dynamics: LorenzParams,
    pub tolerance: f64,
}

impl PhysicsResidualParams {
    pub fn dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn validate(&self) -> Result<(), BarrierError> {
        self.dynamics.validate().map_err(|e| BarrierError::InvalidParameter(e.to_string()))?;
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(BarrierError::InvalidParameter("physics tolerance must be positive".into()));
        }
        Ok(())
    }

    fn state(x: &[f64], l: usize) -> [f64; 3] {
        [x[3 * l], x[3 * l + 1], x[3 * l + 2]]
    }

    /// Per-step defects `D_l`.
    fn defects(&self, x: &[f64]) -> Vec<[f64; 3]> {
        let p = &self.dynamics;
        (0..p.horizon)
            .map(|l| {
                let z = Self::state(x, l);
                let zn = Self::state(x, l + 1);
                let f = lorenz_field(p, z);
                [0, 1, 2].map(|i| (zn[i] - z[i]) / p.dt - f[i])
            })
            .collect()
    }

    /// Mean squared residual; `h = tolerance − residual`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let d = self.defects(x);
        let sum: f64 = d.iter().map(|v| v.iter().map(|c| c * c).sum::<f64>()).sum();
        sum / self.dynamics.horizon as f64
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.tolerance - self.residual(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.dynamics;
        let scale = -2.0 / p.horizon as f64;
        let mut g = vec![0.0; x.len()];
        for (l, d) in self.defects(x).iter().enumerate() {
            let jac = lorenz_jacobian(p, Self::state(x, l));
            for i in 0..3 {
                g[3 * (l + 1) + i] += scale * d[i] / p.dt;
                let jt_d: f64 = (0..3).map(|r| jac[r][i] * d[r]).sum();
                g[3 * l + i] += scale * (-d[i] / p.dt - jt_d);
            }
        }
        g
    }
}

/// `h(x) = e − (1/S)·Σ_s ‖a_{s+1} − a_s‖²/Δ_s` over `x = [a₀; …; a_S]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothnessParams {
    pub horizon: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub tolerance: f64,
}

impl SmoothnessParams {
    pub fn dim(&self) -> usize {
        (self.horizon + 1) * self.action_dim
    }

    pub fn validate(&self) -> Result<(), BarrierError> {
        if self.horizon == 0 || self.action_dim == 0 {
            return Err(BarrierError::InvalidParameter("smoothness horizon and action_dim must be >= 1".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(BarrierError::InvalidParameter("smoothness dt must be positive".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(BarrierError::InvalidParameter("smoothness tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Mean scaled squared variation; `h = tolerance − variation`.
    pub fn variation(&self, x: &[f64]) -> f64 {
        let d = self.action_dim;
        let mut sum = 0.0;
        for s in 0..self.horizon {
            let (a, b) = (&x[s * d..(s + 1) * d], &x[(s + 1) * d..(s + 2) * d]);
            sum += a.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum::<f64>() / self.dt;
        }
        sum / self.horizon as f64
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.tolerance - self.variation(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.action_dim;
        let scale = 2.0 / (self.horizon as f64 * self.dt);
        let mut g = vec![0.0; x.len()];
        for s in 0..self.horizon {
            for i in 0..d {
                let diff = x[(s + 1) * d + i] - x[s * d + i];
                g[(s + 1) * d + i] -= scale * diff;
                g[s * d + i] += scale * diff;
            }
        }
        g
    }
}

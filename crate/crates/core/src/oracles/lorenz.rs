//! Lorenz-63 dynamics and an Euler-consistent trajectory generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OracleError;

/// Parameters of the Lorenz system plus the discretisation used to build
/// flattened trajectories `[z⁰; z¹; …; z^L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    /// Physical step between consecutive states (seconds).
    pub dt: f64,
    /// Number of physical steps; a trajectory holds `horizon + 1` states.
    pub horizon: usize,
    /// Initial conditions are drawn uniformly from `[init_low, init_high]³`.
    pub init_low: f64,
    pub init_high: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0, dt: 0.01, horizon: 50, init_low: -2.0, init_high: 2.0 }
    }
}

impl LorenzParams {
    /// Dimension of a flattened trajectory.
    pub fn state_dim(&self) -> usize {
        3 * (self.horizon + 1)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let finite =
            [self.sigma, self.rho, self.beta, self.dt, self.init_low, self.init_high].iter().all(|v| v.is_finite());
        if !finite {
            return Err(OracleError::InvalidParameter("lorenz parameters must be finite".into()));
        }
        if self.dt <= 0.0 {
            return Err(OracleError::InvalidParameter("lorenz dt must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(OracleError::InvalidParameter("lorenz horizon must be >= 1".into()));
        }
        if self.init_low > self.init_high {
            return Err(OracleError::InvalidParameter("lorenz init region is empty".into()));
        }
        Ok(())
    }
}

/// The Lorenz vector field `ż = (σ(z₂−z₁), z₁(ρ−z₃)−z₂, z₁z₂−βz₃)`.
pub fn lorenz_field(p: &LorenzParams, z: [f64; 3]) -> [f64; 3] {
    [p.sigma * (z[1] - z[0]), z[0] * (p.rho - z[2]) - z[1], z[0] * z[1] - p.beta * z[2]]
}

/// Jacobian of [`lorenz_field`], row-major (`jac[i][j] = ∂żᵢ/∂zⱼ`).
pub fn lorenz_jacobian(p: &LorenzParams, z: [f64; 3]) -> [[f64; 3]; 3] {
    [[-p.sigma, p.sigma, 0.0], [p.rho - z[2], -1.0, -z[0]], [z[1], z[0], -p.beta]]
}

/// Integrates one trajectory with explicit forward Euler at `p.dt`.
pub fn lorenz_trajectory(p: &LorenzParams, z0: [f64; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.state_dim());
    let mut z = z0;
    out.extend_from_slice(&z);
    for _ in 0..p.horizon {
        let dz = lorenz_field(p, z);
        for i in 0..3 {
            z[i] += p.dt * dz[i];
        }
        out.extend_from_slice(&z);
    }
    out
}

/// Generates `count` flattened Euler trajectories from uniform initial
/// conditions. Output is a pure function of `(p, count, seed)`.
pub fn lorenz_dataset(p: &LorenzParams, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, OracleError> {
    if count == 0 {
        return Err(OracleError::InvalidCount);
    }
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let z0 = [0, 1, 2].map(|_| rng.random_range(p.init_low..=p.init_high));
            lorenz_trajectory(p, z0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_fixed_point() {
        assert_eq!(lorenz_field(&LorenzParams::default(), [0.0; 3]), [0.0; 3]);
    }

    #[test]
    fn unit_state_matches_hand_substitution() {
        let f = lorenz_field(&LorenzParams::default(), [1.0, 1.0, 1.0]);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 26.0);
        assert!((f[2] - (-5.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn nontrivial_equilibrium() {
        let p = LorenzParams::default();
        let c = (p.beta * (p.rho - 1.0)).sqrt();
        let f = lorenz_field(&p, [c, c, p.rho - 1.0]);
        for v in f {
            assert!(v.abs() < 1e-12, "{f:?}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = LorenzParams::default();
        let z = [1.3, -0.7, 22.0];
        let jac = lorenz_jacobian(&p, z);
        let step = 1e-6;
        for j in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += step;
            zm[j] -= step;
            let fp = lorenz_field(&p, zp);
            let fm = lorenz_field(&p, zm);
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * step);
                assert!((fd - jac[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(matches!(lorenz_dataset(&LorenzParams::default(), 0, 1), Err(OracleError::InvalidCount)));
    }

    #[test]
    fn dataset_is_deterministic() {
        let p = LorenzParams::default();
        let a = lorenz_dataset(&p, 4, 11).unwrap();
        let b = lorenz_dataset(&p, 4, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), p.state_dim());
        for traj in &a {
            for &v in &traj[..3] {
                assert!((-2.0..=2.0).contains(&v));
            }
        }
    }
}

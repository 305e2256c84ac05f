//! Reverse-time Euler–Maruyama sampling with per-step CBF filtering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::projection::projection_step;
use super::qp::{solve_min_norm, QpInstance, QpStatus};
use super::{assemble_constraint, NoiseMode, ShieldConfig, ShieldError};
use crate::barriers::Barrier;
use crate::constriction::{constricting_barrier, Constriction, TubeRow};
use crate::oracles::{DriftField, NoiseSchedule};

/// How the control `u_k` is produced at each step.
#[derive(Debug, Clone, PartialEq)]
pub enum Guidance {
    /// Min-norm CBF quadratic program.
    Cbf,
    /// `u ≡ 0`.
    None,
    /// A fixed control applied at every step, bypassing the QP.
    Forced(Vec<f64>),
    /// Unguided step followed by projection onto the tube at `t_{k−1}`; the
    /// logged control is the equivalent `(x_pre − x_proj)/Δt`.
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub k: usize,
    pub t: f64,
    /// Smallest row value of `h` at `x_k`.
    pub h: f64,
    /// Smallest row value of `h̃` at `(x_k, t_k)`.
    pub h_tilde: f64,
    /// `ε` of the row attaining `h_tilde`.
    pub epsilon: f64,
    pub u_norm_sq: f64,
    /// Effective sampling noise scale; 0 in deterministic mode.
    pub g: f64,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub min_h_tilde: f64,
    pub final_h: f64,
    /// `Σ_k ‖u_k‖²Δt`.
    pub total_energy: f64,
    /// `Σ_k ‖u_k‖²/g(t_k)²·Δt` over steps with `g > 0`.
    pub kl_integrand: f64,
    /// Some step applied control while the sampling noise was zero.
    pub zero_noise_control: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub path: usize,
    pub dt: f64,
    /// One schedule per barrier row, with that row's `ε₀`.
    pub schedules: Vec<Constriction>,
    /// `K + 1` entries, `k = K, …, 0`.
    pub steps: Vec<StepLog>,
    /// `K + 1` states in the same order; empty unless states are kept.
    pub states: Vec<Vec<f64>>,
    /// `K` controls for `k = K, …, 1`; empty unless states are kept.
    pub controls: Vec<Vec<f64>>,
    pub final_state: Vec<f64>,
    pub summary: TrajectorySummary,
}

impl TrajectoryRecord {
    pub fn epsilon0(&self) -> Vec<f64> {
        self.schedules.iter().map(|s| s.epsilon0).collect()
    }

    /// Per-step logs excluding the terminal entry.
    pub fn control_steps(&self) -> &[StepLog] {
        &self.steps[..self.steps.len() - 1]
    }
}

/// Result of one Euler–Maruyama step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: Vec<f64>,
    pub u: Vec<f64>,
    pub log: StepLog,
}

pub struct Shield<'a> {
    cfg: ShieldConfig,
    barrier: &'a Barrier,
    drift: &'a dyn DriftField,
    noise: NoiseSchedule,
}

fn tightest(rows: &[TubeRow]) -> (f64, f64, f64) {
    let mut h = f64::INFINITY;
    let mut best = (f64::INFINITY, 0.0);
    for r in rows {
        h = h.min(r.h);
        if r.h_tilde < best.0 {
            best = (r.h_tilde, r.epsilon);
        }
    }
    (h, best.0, best.1)
}

impl<'a> Shield<'a> {
    pub fn new(
        cfg: ShieldConfig,
        barrier: &'a Barrier,
        drift: &'a dyn DriftField,
        noise: NoiseSchedule,
    ) -> Result<Self, ShieldError> {
        cfg.validate()?;
        noise.validate()?;
        if noise.horizon != cfg.horizon {
            return Err(ShieldError::Config(format!(
                "noise schedule horizon {} differs from sampler horizon {}",
                noise.horizon, cfg.horizon
            )));
        }
        if drift.dim() != barrier.dim() {
            return Err(ShieldError::Config(format!(
                "drift dimension {} differs from barrier dimension {}",
                drift.dim(),
                barrier.dim()
            )));
        }
        Ok(Self { cfg, barrier, drift, noise })
    }

    pub fn config(&self) -> &ShieldConfig {
        &self.cfg
    }

    pub fn barrier(&self) -> &Barrier {
        self.barrier
    }

    pub fn dim(&self) -> usize {
        self.barrier.dim()
    }

    /// Per-row schedules with `ε₀` fitted to `x_T`.
    pub fn init_schedules(&self, x_t: &[f64]) -> Result<Vec<Constriction>, ShieldError> {
        self.barrier
            .values(x_t)?
            .into_iter()
            .map(|h| Ok(Constriction::initialized(self.cfg.schedule, self.cfg.horizon, h, self.cfg.margin)?))
            .collect()
    }

    fn effective_g(&self, t: f64) -> f64 {
        match self.cfg.noise_mode {
            NoiseMode::Stochastic => self.noise.g(t),
            NoiseMode::Deterministic => 0.0,
        }
    }

    /// One step from `x_k` at `t_k` to `x_{k−1}`. `xi` is the standard normal
    /// draw for this step (ignored in deterministic mode). Under CBF guidance
    /// a state outside the tube is reported as [`ShieldError::TubeViolation`]
    /// with `path = 0`.
    pub fn guided_step(
        &self,
        guidance: &Guidance,
        x: &[f64],
        k: usize,
        schedules: &[Constriction],
        xi: Option<&[f64]>,
    ) -> Result<StepOutcome, ShieldError> {
        if k == 0 || k > self.cfg.steps {
            return Err(ShieldError::Config(format!("step index {k} outside 1..={}", self.cfg.steps)));
        }
        let n = self.dim();
        let dt = self.cfg.dt();
        let t = self.cfg.time(k);
        let rows = constricting_barrier(self.barrier, schedules, x, t)?;
        let (h, h_tilde, epsilon) = tightest(&rows);
        if matches!(guidance, Guidance::Cbf) && h_tilde < -self.cfg.tube_tolerance {
            return Err(ShieldError::TubeViolation { path: 0, k, h_tilde });
        }

        let f = self.drift.drift(x, t)?;
        let g = self.effective_g(t);
        let d_noise: Vec<f64> = match (self.cfg.noise_mode, xi) {
            (NoiseMode::Stochastic, Some(xi)) => {
                let scale = g * dt.sqrt();
                xi.iter().map(|v| scale * v).collect()
            }
            (NoiseMode::Stochastic, None) => {
                return Err(ShieldError::Config("stochastic step needs a noise draw".into()));
            }
            (NoiseMode::Deterministic, _) => vec![0.0; n],
        };

        let mut next: Vec<f64> = (0..n).map(|i| x[i] - f[i] * dt + d_noise[i]).collect();
        let (u, status) = match guidance {
            Guidance::None => (vec![0.0; n], QpStatus::Unguided),
            Guidance::Forced(u) => {
                if u.len() != n {
                    return Err(ShieldError::Config(format!("forced control has length {}, expected {n}", u.len())));
                }
                (u.clone(), QpStatus::Forced)
            }
            Guidance::Cbf => {
                let mut qp = QpInstance::new(n);
                for r in &rows {
                    let (a, b) = assemble_constraint(r.h_tilde, &r.grad, &f, &d_noise, r.dh_dt, &self.cfg.class_k, dt);
                    qp.push(a, b);
                }
                let sol = solve_min_norm(&qp, self.cfg.solver)?;
                (sol.u, sol.status)
            }
            Guidance::Projection => {
                let projected = projection_step(self.barrier, schedules, &next, self.cfg.time(k - 1))?;
                let u = next.iter().zip(&projected).map(|(a, b)| (a - b) / dt).collect();
                next = projected;
                (u, QpStatus::Projected)
            }
        };
        if !matches!(guidance, Guidance::Projection) && u.iter().any(|&v| v != 0.0) {
            for (xn, ui) in next.iter_mut().zip(&u) {
                *xn -= ui * dt;
            }
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(ShieldError::NonFinite(format!("state after step {k}")));
        }
        let u_norm_sq = u.iter().map(|v| v * v).sum();
        Ok(StepOutcome { next, u, log: StepLog { k, t, h, h_tilde, epsilon, u_norm_sq, g, status } })
    }

    /// Runs one path from `x_T` with its own noise stream.
    pub fn run_path(
        &self,
        guidance: &Guidance,
        x_init: Vec<f64>,
        path: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrajectoryRecord, ShieldError> {
        let n = self.dim();
        let steps = self.cfg.steps;
        let dt = self.cfg.dt();
        let schedules = self.init_schedules(&x_init)?;
        let keep = self.cfg.keep_states;
        let mut states = Vec::with_capacity(if keep { steps + 1 } else { 0 });
        let mut controls = Vec::with_capacity(if keep { steps } else { 0 });
        let mut logs = Vec::with_capacity(steps + 1);
        let mut x = x_init;
        let mut xi = vec![0.0; n];
        let mut total_energy = 0.0;
        let mut kl_integrand = 0.0;
        let mut zero_noise_control = false;
        let mut min_h_tilde = f64::INFINITY;
        let tag = |e: ShieldError| match e {
            ShieldError::TubeViolation { k, h_tilde, .. } => ShieldError::TubeViolation { path, k, h_tilde },
            other => other,
        };

        for k in (1..=steps).rev() {
            let draw = match self.cfg.noise_mode {
                NoiseMode::Stochastic => {
                    for v in xi.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    Some(xi.as_slice())
                }
                NoiseMode::Deterministic => None,
            };
            let out = self.guided_step(guidance, &x, k, &schedules, draw).map_err(tag)?;
            let log = out.log;
            min_h_tilde = min_h_tilde.min(log.h_tilde);
            total_energy += log.u_norm_sq * dt;
            if log.u_norm_sq > 0.0 {
                if log.g > 0.0 {
                    kl_integrand += log.u_norm_sq / (log.g * log.g) * dt;
                } else {
                    zero_noise_control = true;
                }
            }
            logs.push(log);
            if keep {
                states.push(std::mem::replace(&mut x, out.next));
                controls.push(out.u);
            } else {
                x = out.next;
            }
        }

        let rows = constricting_barrier(self.barrier, &schedules, &x, 0.0)?;
        let (h, h_tilde, epsilon) = tightest(&rows);
        min_h_tilde = min_h_tilde.min(h_tilde);
        if matches!(guidance, Guidance::Cbf) && h_tilde < -self.cfg.tube_tolerance {
            return Err(ShieldError::TubeViolation { path, k: 0, h_tilde });
        }
        logs.push(StepLog {
            k: 0,
            t: 0.0,
            h,
            h_tilde,
            epsilon,
            u_norm_sq: 0.0,
            g: self.effective_g(0.0),
            status: QpStatus::Terminal,
        });
        if keep {
            states.push(x.clone());
        }
        Ok(TrajectoryRecord {
            path,
            dt,
            schedules,
            steps: logs,
            states,
            controls,
            final_state: x,
            summary: TrajectorySummary { min_h_tilde, final_h: h, total_energy, kl_integrand, zero_noise_control },
        })
    }

    /// Per-path generator: stream `path` of the seed's ChaCha8 sequence.
    pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        rng
    }

    /// Samples `n_paths` trajectories from `x_T ~ N(0, I)`. Paths run in
    /// parallel on the current rayon pool; output is a function of
    /// `(config, guidance, seed)` only.
    pub fn sample(&self, guidance: &Guidance, n_paths: usize, seed: u64) -> Result<Vec<TrajectoryRecord>, ShieldError> {
        if n_paths == 0 {
            return Err(ShieldError::Config("n_paths must be at least 1".into()));
        }
        let n = self.dim();
        (0..n_paths)
            .into_par_iter()
            .map(|path| {
                let mut rng = Self::path_rng(seed, path);
                let x_init: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                self.run_path(guidance, x_init, path, &mut rng)
            })
            .collect()
    }

    /// Like [`Shield::sample`] but every path starts from the same `x_T`.
    pub fn sample_from(
        &self,
        guidance: &Guidance,
        x_init: &[f64],
        n_paths: usize,
        seed: u64,
    ) -> Result<Vec<TrajectoryRecord>, ShieldError> {
        if n_paths == 0 {
            return Err(ShieldError::Config("n_paths must be at least 1".into()));
        }
        if x_init.len() != self.dim() {
            return Err(ShieldError::Config(format!(
                "initial state has length {}, expected {}",
                x_init.len(),
                self.dim()
            )));
        }
        (0..n_paths)
            .into_par_iter()
            .map(|path| {
                let mut rng = Self::path_rng(seed, path);
                self.run_path(guidance, x_init.to_vec(), path, &mut rng)
            })
            .collect()
    }

    pub fn sample_guided(&self, n_paths: usize, seed: u64) -> Result<Vec<TrajectoryRecord>, ShieldError> {
        self.sample(&Guidance::Cbf, n_paths, seed)
    }

    pub fn sample_unconstrained(&self, n_paths: usize, seed: u64) -> Result<Vec<TrajectoryRecord>, ShieldError> {
        self.sample(&Guidance::None, n_paths, seed)
    }

    pub fn sample_projection(&self, n_paths: usize, seed: u64) -> Result<Vec<TrajectoryRecord>, ShieldError> {
        self.sample(&Guidance::Projection, n_paths, seed)
    }
}

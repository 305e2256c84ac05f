//! Constricting relaxation `ε(t)` and the tube barrier `h̃ = h + ε`.
//!
//! `ε` starts at `ε₀` at `t = T`, where `ε₀` is chosen so the initial noise
//! sample is inside the relaxed set, and decays to exactly 0 at `t = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barriers::{Barrier, BarrierError, SparseRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstrictionError {
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("invalid schedule parameter: {0}")]
    InvalidParameter(String),
    #[error("{0}")]
    Barrier(#[from] BarrierError),
    #[error("expected {expected} schedules, got {got}")]
    RowCountMismatch { expected: usize, got: usize },
}

fn default_lambda() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    /// `ε₀·t/T`.
    #[default]
    Linear,
    /// `ε₀·(e^{λt/T} − 1)/(e^λ − 1)`.
    Exponential {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    /// `ε₀·(t/T)^p`, `p ≥ 1`.
    Polynomial { power: f64 },
}

impl ScheduleKind {
    pub fn validate(&self) -> Result<(), ConstrictionError> {
        match *self {
            ScheduleKind::Linear => Ok(()),
            ScheduleKind::Exponential { lambda } if lambda.is_finite() && lambda > 0.0 => Ok(()),
            ScheduleKind::Polynomial { power } if power.is_finite() && power >= 1.0 => Ok(()),
            other => Err(ConstrictionError::InvalidParameter(format!("{other:?}"))),
        }
    }
}

/// `max(0, −h(x_T)) + c`, nudged up by a few ulps when rounding would leave
/// `h(x_T) + ε₀` below `c`.
pub fn epsilon_init(h_at_xt: f64, margin: f64) -> f64 {
    let mut e0 = (-h_at_xt).max(0.0) + margin;
    while h_at_xt.is_finite() && e0.is_finite() && h_at_xt + e0 < margin {
        e0 = e0.next_up();
    }
    e0
}

/// One relaxation schedule with its captured `ε₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constriction {
    pub kind: ScheduleKind,
    pub horizon: f64,
    pub epsilon0: f64,
}

impl Constriction {
    pub fn new(kind: ScheduleKind, horizon: f64, epsilon0: f64) -> Result<Self, ConstrictionError> {
        kind.validate()?;
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ConstrictionError::InvalidParameter("horizon must be positive".into()));
        }
        if !(epsilon0.is_finite() && epsilon0 >= 0.0) {
            return Err(ConstrictionError::InvalidParameter("epsilon0 must be nonnegative".into()));
        }
        Ok(Self { kind, horizon, epsilon0 })
    }

    /// Schedule whose `ε₀` is fitted to the barrier value at the initial sample.
    pub fn initialized(kind: ScheduleKind, horizon: f64, h_at_xt: f64, margin: f64) -> Result<Self, ConstrictionError> {
        if !(margin.is_finite() && margin >= 0.0) {
            return Err(ConstrictionError::InvalidParameter("margin must be nonnegative".into()));
        }
        Self::new(kind, horizon, epsilon_init(h_at_xt, margin))
    }

    fn check(&self, t: f64) -> Result<(), ConstrictionError> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(ConstrictionError::TimeOutOfRange { t, horizon: self.horizon })
        }
    }

    pub fn epsilon(&self, t: f64) -> Result<f64, ConstrictionError> {
        self.check(t)?;
        if t == self.horizon {
            return Ok(self.epsilon0);
        }
        let s = t / self.horizon;
        Ok(match self.kind {
            ScheduleKind::Linear => self.epsilon0 * s,
            ScheduleKind::Exponential { lambda } => self.epsilon0 * (lambda * s).exp_m1() / lambda.exp_m1(),
            ScheduleKind::Polynomial { power } => self.epsilon0 * s.powf(power),
        })
    }

    /// `∂ε/∂t`.
    pub fn epsilon_dt(&self, t: f64) -> Result<f64, ConstrictionError> {
        self.check(t)?;
        let s = t / self.horizon;
        let e = self.epsilon0 / self.horizon;
        Ok(match self.kind {
            ScheduleKind::Linear => e,
            ScheduleKind::Exponential { lambda } => e * lambda * (lambda * s).exp() / lambda.exp_m1(),
            ScheduleKind::Polynomial { power } => e * power * s.powf(power - 1.0),
        })
    }
}

/// Tube barrier for one row: value, spatial gradient and time derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeRow {
    pub h: f64,
    pub h_tilde: f64,
    pub epsilon: f64,
    pub grad: SparseRow,
    pub dh_dt: f64,
}

/// Evaluates `h̃_j = h_j + ε_j(t)` for every row of `barrier`, pairing row `j`
/// with `schedules[j]`.
pub fn constricting_barrier(
    barrier: &Barrier,
    schedules: &[Constriction],
    x: &[f64],
    t: f64,
) -> Result<Vec<TubeRow>, ConstrictionError> {
    if schedules.len() != barrier.n_rows() {
        return Err(ConstrictionError::RowCountMismatch { expected: barrier.n_rows(), got: schedules.len() });
    }
    let hs = barrier.values(x)?;
    let grads = barrier.gradients(x)?;
    hs.into_iter()
        .zip(grads)
        .zip(schedules)
        .map(|((h, grad), s)| {
            let epsilon = s.epsilon(t)?;
            Ok(TubeRow { h, h_tilde: h + epsilon, epsilon, grad, dh_dt: s.epsilon_dt(t)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barriers::{BarrierSpec, HalfspaceParams};
    use proptest::prelude::*;

    #[test]
    fn init_examples() {
        assert!((epsilon_init(-15.9, 0.1) - 16.0).abs() < 1e-12);
        assert_eq!(epsilon_init(5.0, 0.1), 0.1);
        assert_eq!(epsilon_init(0.0, 0.0), 0.0);
    }

    #[test]
    fn eval_examples() {
        let lin = Constriction::new(ScheduleKind::Linear, 1.0, 16.0).unwrap();
        assert_eq!(lin.epsilon(1.0).unwrap(), 16.0);
        assert_eq!(lin.epsilon(0.0).unwrap(), 0.0);
        assert_eq!(lin.epsilon_dt(0.3).unwrap(), 16.0);
        let poly = Constriction::new(ScheduleKind::Polynomial { power: 2.0 }, 1.0, 16.0).unwrap();
        assert_eq!(poly.epsilon(0.5).unwrap(), 4.0);
        assert_eq!(poly.epsilon_dt(0.0).unwrap(), 0.0);
        assert!(matches!(lin.epsilon(1.5), Err(ConstrictionError::TimeOutOfRange { .. })));
        assert!(lin.epsilon_dt(-0.5).is_err());
    }

    #[test]
    fn bad_kinds_rejected() {
        assert!(Constriction::new(ScheduleKind::Exponential { lambda: 0.0 }, 1.0, 1.0).is_err());
        assert!(Constriction::new(ScheduleKind::Polynomial { power: 0.5 }, 1.0, 1.0).is_err());
        assert!(Constriction::new(ScheduleKind::Linear, 0.0, 1.0).is_err());
        assert!(Constriction::initialized(ScheduleKind::Linear, 1.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn halfspace_tube_by_hand() {
        let b = BarrierSpec::Halfspace(HalfspaceParams { normal: vec![1.0], offset: 0.0 }).compile().unwrap();
        let s = Constriction::new(ScheduleKind::Linear, 1.0, 2.0).unwrap();
        let rows = constricting_barrier(&b, &[s], &[-1.0], 0.5).unwrap();
        assert_eq!(rows[0].h_tilde, 0.0);
        assert_eq!(rows[0].dh_dt, 2.0);
        let rows = constricting_barrier(&b, &[s], &[-1.0], 0.0).unwrap();
        assert_eq!(rows[0].h_tilde, rows[0].h);
    }

    fn kinds() -> impl Strategy<Value = ScheduleKind> {
        prop_oneof![
            Just(ScheduleKind::Linear),
            (0.1f64..6.0).prop_map(|lambda| ScheduleKind::Exponential { lambda }),
            (1.0f64..5.0).prop_map(|power| ScheduleKind::Polynomial { power }),
        ]
    }

    proptest! {
        #[test]
        fn endpoints_exact_and_monotone(kind in kinds(), horizon in 0.1f64..10.0, e0 in 0.0f64..100.0,
                                        a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let s = Constriction::new(kind, horizon, e0).unwrap();
            prop_assert_eq!(s.epsilon(0.0).unwrap(), 0.0);
            prop_assert_eq!(s.epsilon(horizon).unwrap(), e0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.epsilon(lo * horizon).unwrap() <= s.epsilon(hi * horizon).unwrap());
            prop_assert!(s.epsilon_dt(lo * horizon).unwrap() >= 0.0);
        }

        #[test]
        fn derivative_matches_finite_difference(kind in kinds(), e0 in 0.5f64..50.0, u in 0.05f64..0.95) {
            let horizon = 1.0;
            let s = Constriction::new(kind, horizon, e0).unwrap();
            let step = 1e-6;
            let fd = (s.epsilon(u + step).unwrap() - s.epsilon(u - step).unwrap()) / (2.0 * step);
            let an = s.epsilon_dt(u).unwrap();
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "fd {} an {}", fd, an);
        }

        #[test]
        fn initial_state_is_inside_tube(h in -50.0f64..50.0, c in 0.0f64..1.0, kind in kinds()) {
            let s = Constriction::initialized(kind, 1.0, h, c).unwrap();
            prop_assert!(h + s.epsilon(1.0).unwrap() >= c);
        }
    }
}

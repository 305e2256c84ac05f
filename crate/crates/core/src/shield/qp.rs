//! Minimum-norm QP `min ½‖u‖²  s.t.  a_j·u ≤ b_j`.

use serde::{Deserialize, Serialize};

use super::ShieldError;
use crate::barriers::SparseRow;

pub const DUAL_TOLERANCE: f64 = 1e-10;
pub const DUAL_MAX_ITERATIONS: usize = 10_000;
pub const FEASIBILITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    ClosedForm,
    DualAscent,
    #[default]
    Auto,
}

/// Outcome label logged per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    /// Every row slack, `u* = 0`.
    Slack,
    /// Some row active, solved in closed form.
    ClosedForm,
    /// Some row active, solved by dual coordinate ascent.
    DualAscent,
    /// Control not synthesised: unguided step.
    Unguided,
    /// Control injected from outside.
    Forced,
    /// Projection baseline.
    Projected,
    /// Final state, no step taken.
    Terminal,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Slack => "slack",
            QpStatus::ClosedForm => "closed_form",
            QpStatus::DualAscent => "dual_ascent",
            QpStatus::Unguided => "unguided",
            QpStatus::Forced => "forced",
            QpStatus::Projected => "projected",
            QpStatus::Terminal => "terminal",
        }
    }
}

/// Rows `a_j·u ≤ b_j` over `R^dim`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QpInstance {
    pub dim: usize,
    pub rows: Vec<(SparseRow, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vec<f64>,
    /// One multiplier per input row; 0 for dropped rows.
    pub multipliers: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

impl QpInstance {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new() }
    }

    pub fn push(&mut self, a: SparseRow, b: f64) {
        self.rows.push((a, b));
    }

    pub fn has_disjoint_supports(&self) -> bool {
        let mut seen = vec![false; self.dim];
        for (a, _) in &self.rows {
            for (&i, &v) in a.indices.iter().zip(&a.values) {
                if v == 0.0 {
                    continue;
                }
                if seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        true
    }
}

/// Solves the instance with the requested method. Rows with `a = 0` and
/// `b ≥ 0` are ignored; `a = 0` with `b < 0` is [`ShieldError::GradientDegenerate`].
pub fn solve_min_norm(qp: &QpInstance, solver: SolverKind) -> Result<QpSolution, ShieldError> {
    let m = qp.rows.len();
    let mut active = Vec::with_capacity(m);
    for (j, (a, b)) in qp.rows.iter().enumerate() {
        if !b.is_finite() || !a.values.iter().all(|v| v.is_finite()) {
            return Err(ShieldError::NonFinite(format!("QP row {j}")));
        }
        if a.indices.iter().any(|&i| i >= qp.dim) {
            return Err(ShieldError::Config(format!("QP row {j} indexes outside dimension {}", qp.dim)));
        }
        let norm_sq = a.norm_sq();
        if norm_sq == 0.0 {
            if *b < 0.0 {
                return Err(ShieldError::GradientDegenerate { row: j, b: *b });
            }
            continue;
        }
        active.push((j, norm_sq));
    }

    let mut multipliers = vec![0.0; m];
    if active.iter().all(|&(j, _)| qp.rows[j].1 >= 0.0) {
        return Ok(QpSolution { u: vec![0.0; qp.dim], multipliers, status: QpStatus::Slack, iterations: 0 });
    }

    let use_closed = match solver {
        SolverKind::ClosedForm => {
            if !qp.has_disjoint_supports() {
                return Err(ShieldError::Config("closed-form solver needs pairwise disjoint row supports".into()));
            }
            true
        }
        SolverKind::DualAscent => false,
        SolverKind::Auto => qp.has_disjoint_supports(),
    };

    if use_closed {
        let mut u = vec![0.0; qp.dim];
        for &(j, norm_sq) in &active {
            let (a, b) = &qp.rows[j];
            let coeff = (b / norm_sq).min(0.0);
            if coeff < 0.0 {
                a.axpy(coeff, &mut u);
                multipliers[j] = -coeff;
            }
        }
        return Ok(QpSolution { u, multipliers, status: QpStatus::ClosedForm, iterations: 1 });
    }

    // Hildreth: coordinate ascent on the dual with u = −Σ λ_j a_j.
    let mut u = vec![0.0; qp.dim];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < DUAL_MAX_ITERATIONS {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for &(j, norm_sq) in &active {
            let (a, b) = &qp.rows[j];
            let lambda = multipliers[j];
            let next = (lambda + (a.dot(&u) - b) / norm_sq).max(0.0);
            let delta = next - lambda;
            if delta != 0.0 {
                a.axpy(-delta, &mut u);
                multipliers[j] = next;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change <= DUAL_TOLERANCE {
            converged = true;
            break;
        }
    }
    let feasible = active.iter().all(|&(j, _)| qp.rows[j].0.dot(&u) <= qp.rows[j].1 + FEASIBILITY_TOLERANCE);
    if !converged || !feasible {
        return Err(ShieldError::DualNonConvergence { iterations });
    }
    Ok(QpSolution { u, multipliers, status: QpStatus::DualAscent, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense(v: &[f64]) -> SparseRow {
        SparseRow::dense(v.to_vec())
    }

    fn single(a: &[f64], b: f64) -> QpInstance {
        let mut qp = QpInstance::new(a.len());
        qp.push(dense(a), b);
        qp
    }

    #[test]
    fn slack_row_gives_zero() {
        let s = solve_min_norm(&single(&[1.0, 0.0], 3.0), SolverKind::Auto).unwrap();
        assert_eq!(s.u, vec![0.0, 0.0]);
        assert_eq!(s.status, QpStatus::Slack);
    }

    #[test]
    fn active_row_closed_form_and_dual() {
        let qp = single(&[2.0, 0.0], -4.0);
        let c = solve_min_norm(&qp, SolverKind::ClosedForm).unwrap();
        assert_eq!(c.u, vec![-2.0, 0.0]);
        let d = solve_min_norm(&qp, SolverKind::DualAscent).unwrap();
        assert!((d.u[0] + 2.0).abs() < 1e-10 && d.u[1] == 0.0);
    }

    #[test]
    fn disjoint_blocks() {
        let mut qp = QpInstance::new(4);
        qp.push(dense(&[1.0, 0.0, 0.0, 0.0]), -1.0);
        qp.push(SparseRow { indices: vec![2], values: vec![2.0] }, -2.0);
        let c = solve_min_norm(&qp, SolverKind::Auto).unwrap();
        assert_eq!(c.status, QpStatus::ClosedForm);
        assert_eq!(c.u, vec![-1.0, 0.0, -1.0, 0.0]);
        let d = solve_min_norm(&qp, SolverKind::DualAscent).unwrap();
        for i in 0..4 {
            assert!((c.u[i] - d.u[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_rows() {
        let mut qp = QpInstance::new(2);
        qp.push(dense(&[0.0, 0.0]), 1.0);
        qp.push(dense(&[1.0, 0.0]), -1.0);
        let s = solve_min_norm(&qp, SolverKind::Auto).unwrap();
        assert_eq!(s.u, vec![-1.0, 0.0]);
        assert_eq!(s.multipliers, vec![0.0, 1.0]);
        let bad = single(&[0.0, 0.0], -1.0);
        assert!(matches!(solve_min_norm(&bad, SolverKind::Auto), Err(ShieldError::GradientDegenerate { row: 0, .. })));
    }

    #[test]
    fn overlapping_rows_rejected_by_closed_form() {
        let mut qp = QpInstance::new(2);
        qp.push(dense(&[1.0, 0.0]), -1.0);
        qp.push(dense(&[1.0, 1.0]), -1.0);
        assert!(solve_min_norm(&qp, SolverKind::ClosedForm).is_err());
        let s = solve_min_norm(&qp, SolverKind::Auto).unwrap();
        assert_eq!(s.status, QpStatus::DualAscent);
        assert!((s.u[0] + 1.0).abs() < 1e-9 && s.u[1].abs() < 1e-9);
    }

    #[test]
    fn infeasible_pair_does_not_converge() {
        let mut qp = QpInstance::new(1);
        qp.push(dense(&[1.0]), -1.0);
        qp.push(dense(&[-1.0]), -1.0);
        assert!(matches!(solve_min_norm(&qp, SolverKind::DualAscent), Err(ShieldError::DualNonConvergence { .. })));
    }

    fn overlapping() -> impl Strategy<Value = QpInstance> {
        (1usize..4, 2usize..5).prop_flat_map(|(m, n)| {
            prop::collection::vec((prop::collection::vec(-2.0f64..2.0, n), -2.0f64..1.0), m).prop_map(move |rows| {
                let mut qp = QpInstance::new(n);
                for (a, b) in rows {
                    qp.push(SparseRow::dense(a), b);
                }
                qp
            })
        })
    }

    proptest! {
        #[test]
        fn single_row_direction(a in prop::collection::vec(-3.0f64..3.0, 1..6), b in -5.0f64..5.0) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3));
            let s = solve_min_norm(&single(&a, b), SolverKind::ClosedForm).unwrap();
            let coeff = (b / a.iter().map(|v| v * v).sum::<f64>()).min(0.0);
            for (ui, ai) in s.u.iter().zip(&a) {
                prop_assert!((ui - coeff * ai).abs() <= 1e-12 * ai.abs().max(1.0));
            }
        }

        // Every solved row is either slack with a zero multiplier or tight.
        #[test]
        fn complementarity(qp in overlapping()) {
            if let Ok(s) = solve_min_norm(&qp, SolverKind::DualAscent) {
                for ((a, b), lambda) in qp.rows.iter().zip(&s.multipliers) {
                    let au = a.dot(&s.u);
                    prop_assert!(au <= b + 1e-8);
                    prop_assert!(*lambda >= 0.0);
                    if *lambda > 0.0 {
                        prop_assert!((au - b).abs() <= 1e-8, "active row not tight: {} vs {}", au, b);
                    }
                }
            }
        }
    }
}

//! Euclidean projection onto the relaxed safe set `{h̃(·, t) ≥ 0}`.

use super::ShieldError;
use crate::barriers::{Barrier, BarrierRow};
use crate::constriction::Constriction;

const ROOT_TOLERANCE: f64 = 1e-8;
const MAX_SWEEPS: usize = 1000;
const MAX_NEWTON: usize = 200;

/// Projects `x` onto every row's tube at time `t`. Rows are handled one at
/// a time and swept cyclically until all are satisfied.
pub fn projection_step(
    barrier: &Barrier,
    schedules: &[Constriction],
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>, ShieldError> {
    let mut y = x.to_vec();
    barrier.values(&y)?;
    let eps = schedules.iter().map(|s| s.epsilon(t)).collect::<Result<Vec<_>, _>>()?;
    for _ in 0..MAX_SWEEPS {
        let mut moved = false;
        for (j, row) in barrier.rows().iter().enumerate() {
            if row.value(&y) + eps[j] >= 0.0 {
                continue;
            }
            project_row(row, eps[j], &mut y, j)?;
            moved = true;
        }
        if !moved {
            return Ok(y);
        }
    }
    Err(ShieldError::ProjectionFailed(format!("no feasible point after {MAX_SWEEPS} sweeps")))
}

fn project_row(row: &BarrierRow, eps: f64, y: &mut [f64], j: usize) -> Result<(), ShieldError> {
    match row {
        BarrierRow::Linear { normal, offset } => {
            let h_tilde = normal.dot(y) - offset + eps;
            let mut step = -h_tilde / normal.norm_sq();
            let base = y.to_vec();
            let scale = normal.indices.iter().map(|&i| base[i].abs()).fold(offset.abs() + eps, f64::max);
            let mut bump = f64::EPSILON * (scale + step.abs()) / normal.norm_sq().sqrt();
            for _ in 0..64 {
                y.copy_from_slice(&base);
                normal.axpy(step, y);
                if row.value(y) + eps >= 0.0 {
                    return Ok(());
                }
                step += bump;
                bump *= 2.0;
            }
            Err(ShieldError::ProjectionFailed(format!("row {j}: halfspace rounding")))
        }
        BarrierRow::Ball { center, radius_sq } => {
            let radius = (radius_sq + eps).sqrt();
            let idx: Vec<usize> = (0..y.len()).collect();
            radial(y, &idx, center, radius, |y| row.value(y) + eps >= 0.0, j)
        }
        BarrierRow::Pixel(p) => {
            let radius = ((p.tolerance + eps) / p.weight).sqrt();
            let idx = [p.base, p.base + 1, p.base + 2];
            radial(y, &idx, &p.target, radius, |y| row.value(y) + eps >= 0.0, j)
        }
        BarrierRow::Physics(_) | BarrierRow::Smoothness(_) => gradient_search(row, eps, y, j),
    }
}

/// Pulls the coordinates `idx` of `y` radially onto the ball of `radius`
/// about `center`, shrinking by a few ulps if rounding leaves it outside.
fn radial(
    y: &mut [f64],
    idx: &[usize],
    center: &[f64],
    radius: f64,
    feasible: impl Fn(&[f64]) -> bool,
    j: usize,
) -> Result<(), ShieldError> {
    let dist = idx.iter().zip(center).map(|(&i, c)| (y[i] - c).powi(2)).sum::<f64>().sqrt();
    if dist == 0.0 {
        return Err(ShieldError::GradientDegenerate { row: j, b: f64::NAN });
    }
    let offsets: Vec<f64> = idx.iter().zip(center).map(|(&i, c)| y[i] - c).collect();
    let mut scale = radius / dist;
    for _ in 0..64 {
        for ((&i, c), o) in idx.iter().zip(center).zip(&offsets) {
            y[i] = c + o * scale;
        }
        if feasible(y) {
            return Ok(());
        }
        scale *= 1.0 - 4.0 * f64::EPSILON;
    }
    Err(ShieldError::ProjectionFailed(format!("row {j}: radial rounding")))
}

/// Linearised steps along `∇h̃` until feasible, then bisection back to the
/// boundary so that `0 ≤ h̃ ≤ 1e-8` (or as close as rounding allows).
fn gradient_search(row: &BarrierRow, eps: f64, y: &mut [f64], j: usize) -> Result<(), ShieldError> {
    let value = |z: &[f64]| row.value(z) + eps;
    let mut trial = y.to_vec();
    for _ in 0..MAX_NEWTON {
        let v = value(y);
        if v >= 0.0 {
            return Ok(());
        }
        let grad = row.gradient(y);
        let gn = grad.norm_sq();
        if gn == 0.0 {
            return Err(ShieldError::GradientDegenerate { row: j, b: v });
        }
        let base_step = -v / gn;
        let at = |s: f64, trial: &mut Vec<f64>| {
            trial.copy_from_slice(y);
            grad.axpy(s, trial);
            value(trial)
        };
        // Overshoot the linearised root; if that lands inside, bisect.
        let far = 2.0 * base_step;
        if at(far, &mut trial) >= 0.0 {
            let (mut lo, mut hi) = (0.0, far);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let vm = at(mid, &mut trial);
                if vm >= 0.0 {
                    hi = mid;
                    if vm <= ROOT_TOLERANCE {
                        break;
                    }
                } else {
                    lo = mid;
                }
                if hi - lo <= f64::EPSILON * hi {
                    break;
                }
            }
            at(hi, &mut trial);
            y.copy_from_slice(&trial);
            return Ok(());
        }
        let mut s = far;
        let mut improved = false;
        for _ in 0..60 {
            if at(s, &mut trial) > v {
                improved = true;
                break;
            }
            s *= 0.5;
        }
        if !improved {
            return Err(ShieldError::ProjectionFailed(format!("row {j}: no ascent along the gradient")));
        }
        y.copy_from_slice(&trial);
    }
    Err(ShieldError::ProjectionFailed(format!("row {j}: line search did not reach the tube")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barriers::{BallParams, BarrierSpec, HalfspaceParams, SmoothnessParams};
    use crate::constriction::ScheduleKind;

    fn sched(e0: f64) -> Constriction {
        Constriction::new(ScheduleKind::Linear, 1.0, e0).unwrap()
    }

    #[test]
    fn interior_unchanged() {
        let b = BarrierSpec::Ball(BallParams { center: vec![0.0, 0.0], radius: 1.0 }).compile().unwrap();
        assert_eq!(projection_step(&b, &[sched(0.0)], &[0.3, 0.1], 0.0).unwrap(), vec![0.3, 0.1]);
    }

    #[test]
    fn halfspace_orthogonal() {
        let b = BarrierSpec::Halfspace(HalfspaceParams { normal: vec![1.0, 0.0], offset: 0.0 }).compile().unwrap();
        let p = projection_step(&b, &[sched(0.0)], &[-2.0, 3.0], 0.0).unwrap();
        assert_eq!(p, vec![0.0, 3.0]);
        // Oracle: no feasible grid point is closer.
        let d = ((p[0] + 2.0f64).powi(2) + (p[1] - 3.0f64).powi(2)).sqrt();
        for i in 0..=40 {
            for k in 0..=40 {
                let q = [i as f64 * 0.1, k as f64 * 0.1 + 1.0];
                let dq = ((q[0] + 2.0f64).powi(2) + (q[1] - 3.0f64).powi(2)).sqrt();
                assert!(dq >= d - 1e-12);
            }
        }
    }

    #[test]
    fn ball_radial() {
        let b = BarrierSpec::Ball(BallParams { center: vec![0.0, 0.0], radius: 1.0 }).compile().unwrap();
        let p = projection_step(&b, &[sched(0.0)], &[2.0, 0.0], 0.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        assert!(b.values(&p).unwrap()[0] >= 0.0);
    }

    #[test]
    fn smoothness_line_search_lands_on_boundary() {
        let params = SmoothnessParams { horizon: 4, action_dim: 1, dt: 0.1, tolerance: 0.5 };
        let b = BarrierSpec::Smoothness(params).compile().unwrap();
        let x = [0.0, 1.0, -1.0, 2.0, 0.5];
        let s = sched(3.0);
        let p = projection_step(&b, &[s], &x, 0.5).unwrap();
        let v = b.values(&p).unwrap()[0] + s.epsilon(0.5).unwrap();
        assert!((0.0..=1e-8).contains(&v), "h̃ = {v}");
    }
}

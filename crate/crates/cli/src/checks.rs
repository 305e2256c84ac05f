//! Self-check suites: QP solver agreement, KL estimator against its closed
//! form and barrier gradients against finite differences.

use cbf_shield::barriers::{BarrierRow, PixelRegion};
use cbf_shield::oracles::NoiseKind;
use cbf_shield::{
    kl_girsanov_estimate, lorenz_dataset, solve_min_norm, BallParams, BarrierSpec, BoxParams, ColorRegionParams,
    Guidance, HalfspaceParams, ImageShape, LorenzParams, NoiseSchedule, PhysicsResidualParams, PixelPatchParams,
    QpInstance, Shield, ShieldConfig, SmoothnessParams, SolverKind, SparseRow, ZeroDrift,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SINGLE_ROW_TOLERANCE: f64 = 1e-9;
pub const MULTI_ROW_TOLERANCE: f64 = 1e-8;
pub const KL_RELATIVE_TOLERANCE: f64 = 0.05;
pub const LINEAR_GRAD_TOLERANCE: f64 = 1e-9;
pub const NONLINEAR_GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpCheckReport {
    pub single_instances: usize,
    pub single_max_diff: f64,
    pub multi_instances: usize,
    pub multi_max_diff: f64,
    pub passed: bool,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_row(rng: &mut ChaCha8Rng, indices: Vec<usize>) -> SparseRow {
    let values = indices.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
    SparseRow { indices, values }
}

/// Closed form against dual ascent on random single-row instances and on
/// random multi-row instances with pairwise-disjoint supports.
pub fn qp_check(single: usize, multi: usize, seed: u64) -> Result<QpCheckReport, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut single_max_diff: f64 = 0.0;
    for _ in 0..single {
        let n = rng.random_range(1..=8);
        let mut qp = QpInstance::new(n);
        qp.push(random_row(&mut rng, (0..n).collect()), rng.random_range(-3.0..3.0));
        let closed = solve_min_norm(&qp, SolverKind::ClosedForm)?;
        let dual = solve_min_norm(&qp, SolverKind::DualAscent)?;
        single_max_diff = single_max_diff.max(max_abs_diff(&closed.u, &dual.u));
    }
    let mut multi_max_diff: f64 = 0.0;
    for _ in 0..multi {
        let blocks = rng.random_range(2..=6);
        let sizes: Vec<usize> = (0..blocks).map(|_| rng.random_range(1..=4)).collect();
        let n: usize = sizes.iter().sum();
        // Shuffle coordinates so blocks are not contiguous.
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut qp = QpInstance::new(n);
        let mut start = 0;
        for s in sizes {
            let mut idx = perm[start..start + s].to_vec();
            idx.sort_unstable();
            start += s;
            qp.push(random_row(&mut rng, idx), rng.random_range(-3.0..1.0));
        }
        let closed = solve_min_norm(&qp, SolverKind::ClosedForm)?;
        let dual = solve_min_norm(&qp, SolverKind::DualAscent)?;
        multi_max_diff = multi_max_diff.max(max_abs_diff(&closed.u, &dual.u));
    }
    Ok(QpCheckReport {
        single_instances: single,
        single_max_diff,
        multi_instances: multi,
        multi_max_diff,
        passed: single_max_diff <= SINGLE_ROW_TOLERANCE && multi_max_diff <= MULTI_ROW_TOLERANCE,
    })
}

/// One constant-control diffusion `dX = −u dt + g dW` run from `x_T = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlCheckRow {
    pub control: Vec<f64>,
    pub g: f64,
    pub horizon: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `T‖u‖²/(2g²)`.
    pub analytic: f64,
    pub relative_error: f64,
    /// Gaussian KL between forced and unforced terminal samples, computed
    /// from their empirical means and pooled variance.
    pub terminal_empirical: f64,
    pub passed: bool,
}

pub fn kl_default_settings() -> Vec<(Vec<f64>, f64, f64)> {
    vec![(vec![1.0, 0.5], 0.5, 1.0), (vec![2.0, -1.0, 0.5], 1.0, 1.0), (vec![0.5], 0.25, 2.0)]
}

pub fn kl_check_one(
    control: &[f64],
    g: f64,
    horizon: f64,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<KlCheckRow, CliError> {
    let n = control.len();
    let mut normal = vec![0.0; n];
    normal[0] = 1.0;
    let barrier = BarrierSpec::Halfspace(HalfspaceParams { normal, offset: -1e9 }).compile()?;
    let drift = ZeroDrift { dim: n };
    let noise =
        NoiseSchedule::new(NoiseKind::ConstantG { g }, horizon).map_err(|e| CliError::Validation(e.to_string()))?;
    let cfg = ShieldConfig { horizon, steps, keep_states: false, ..Default::default() };
    let shield = Shield::new(cfg, &barrier, &drift, noise)?;
    let origin = vec![0.0; n];
    let forced = shield.sample_from(&Guidance::Forced(control.to_vec()), &origin, n_paths, seed)?;
    let free = shield.sample_from(&Guidance::None, &origin, n_paths, seed.wrapping_add(1))?;
    let report = kl_girsanov_estimate(&forced)?;
    let analytic = horizon * control.iter().map(|u| u * u).sum::<f64>() / (2.0 * g * g);
    let relative_error = (report.estimate - analytic).abs() / analytic;

    let moments = |recs: &[cbf_shield::TrajectoryRecord]| {
        let m = recs.len() as f64;
        let mean: Vec<f64> = (0..n).map(|i| recs.iter().map(|r| r.final_state[i]).sum::<f64>() / m).collect();
        let var = (0..n)
            .map(|i| recs.iter().map(|r| (r.final_state[i] - mean[i]).powi(2)).sum::<f64>() / (m - 1.0))
            .sum::<f64>()
            / n as f64;
        (mean, var)
    };
    let (m1, v1) = moments(&forced);
    let (m0, v0) = moments(&free);
    let pooled = 0.5 * (v1 + v0);
    let terminal_empirical = m1.iter().zip(&m0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * pooled);

    Ok(KlCheckRow {
        control: control.to_vec(),
        g,
        horizon,
        estimate: report.estimate,
        stderr: report.stderr,
        analytic,
        relative_error,
        terminal_empirical,
        passed: relative_error <= KL_RELATIVE_TOLERANCE,
    })
}

pub fn kl_check(
    settings: &[(Vec<f64>, f64, f64)],
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<KlCheckRow>, CliError> {
    settings
        .iter()
        .enumerate()
        .map(|(i, (u, g, t))| kl_check_one(u, *g, *t, n_paths, steps, seed.wrapping_add(1000 * i as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub kind: String,
    pub trials: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn is_linear(spec: &BarrierSpec) -> Result<bool, CliError> {
    Ok(spec.compile()?.rows().iter().all(|r| matches!(r, BarrierRow::Linear { .. })))
}

/// Every barrier kind at `trials` random states each.
pub fn grad_check_suite(trials: usize, seed: u64) -> Result<Vec<GradCheckRow>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lorenz = LorenzParams { horizon: 10, ..LorenzParams::default() };
    let lorenz_data = lorenz_dataset(&lorenz, trials, seed).map_err(|e| CliError::Validation(e.to_string()))?;
    let shape = ImageShape { height: 6, width: 5 };
    let smooth = SmoothnessParams { horizon: 15, action_dim: 2, dt: 0.1, tolerance: 1.5 };

    type Case = (&'static str, BarrierSpec, Box<dyn Fn(&mut ChaCha8Rng, usize) -> Vec<f64>>);
    let cases: Vec<Case> = vec![
        (
            "halfspace",
            BarrierSpec::Halfspace(HalfspaceParams { normal: vec![1.5, -0.5, 2.0], offset: 0.3 }),
            Box::new(|r, _| gaussian(r, 3, 2.0)),
        ),
        (
            "box",
            BarrierSpec::Box(BoxParams { lower: vec![-1.0, -2.0], upper: vec![1.0, 0.5] }),
            Box::new(|r, _| gaussian(r, 2, 2.0)),
        ),
        (
            "ball",
            BarrierSpec::Ball(BallParams { center: vec![0.5, -1.0, 0.0, 2.0], radius: 1.5 }),
            Box::new(|r, _| gaussian(r, 4, 2.0)),
        ),
        (
            "physics_residual",
            BarrierSpec::PhysicsResidual(PhysicsResidualParams { dynamics: lorenz, tolerance: 0.001 }),
            Box::new(move |r, i| {
                lorenz_data[i].iter().map(|v| v + 0.05 * r.sample::<f64, _>(StandardNormal)).collect()
            }),
        ),
        (
            "pixel_patch",
            BarrierSpec::PixelPatch(PixelPatchParams {
                shape,
                region: PixelRegion { row_min: 1, row_max: 4, col_min: 0, col_max: 3 },
                reference: vec![0.8, -0.8, 0.1],
                tolerance: 0.05,
            }),
            Box::new(move |r, _| (0..shape.dim()).map(|_| r.random_range(-1.0..=1.0)).collect()),
        ),
        (
            "color_region",
            BarrierSpec::ColorRegion(ColorRegionParams {
                shape,
                row_min: 2,
                row_max: 5,
                target: [0.2, 0.4, -0.6],
                v_min: 0.3,
                v_max: 1.0,
                tolerance: 0.1,
            }),
            Box::new(move |r, _| (0..shape.dim()).map(|_| r.random_range(-1.0..=1.0)).collect()),
        ),
        ("smoothness", BarrierSpec::Smoothness(smooth), Box::new(move |r, _| gaussian(r, smooth.dim(), 1.0))),
        (
            "intersection",
            BarrierSpec::Intersection {
                members: vec![
                    BarrierSpec::Halfspace(HalfspaceParams { normal: vec![1.0, 1.0], offset: -1.0 }),
                    BarrierSpec::Ball(BallParams { center: vec![0.0, 0.0], radius: 2.0 }),
                ],
            },
            Box::new(|r, _| gaussian(r, 2, 2.0)),
        ),
    ];

    let mut rows = Vec::with_capacity(cases.len());
    for (kind, spec, draw) in cases {
        let barrier = spec.compile()?;
        let tolerance = if is_linear(&spec)? { LINEAR_GRAD_TOLERANCE } else { NONLINEAR_GRAD_TOLERANCE };
        let mut max_error: f64 = 0.0;
        for i in 0..trials {
            let x = draw(&mut rng, i);
            max_error = max_error.max(barrier.grad_check(&x, GRAD_STEP)?);
        }
        rows.push(GradCheckRow {
            kind: kind.to_string(),
            trials,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qp_small_run_agrees() {
        let r = qp_check(50, 20, 1).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn grad_suite_small_run() {
        for row in grad_check_suite(3, 2).unwrap() {
            assert!(row.passed, "{row:?}");
        }
    }
}

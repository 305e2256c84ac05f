use approx::assert_relative_eq;
use cbf_shield::oracles::NoiseKind;
use cbf_shield::{
    energy_profile, invariance_audit, kl_girsanov_estimate, lorenz_dataset, BarrierSpec, ClassK, DriftKind,
    DriftScaling, GaussianMixture, Guidance, HalfspaceParams, LorenzParams, NoiseSchedule, PhysicsResidualParams,
    QpStatus, ScoreDrift, Shield, ShieldConfig, ShieldError,
};

fn vp() -> NoiseSchedule {
    NoiseSchedule::new(NoiseKind::default(), 1.0).unwrap()
}

fn two_modes() -> GaussianMixture {
    GaussianMixture::new(vec![0.5, 0.5], vec![vec![-2.0, 0.0], vec![2.0, 0.0]], vec![0.5, 0.5]).unwrap()
}

fn halfspace(offset: f64) -> cbf_shield::Barrier {
    BarrierSpec::Halfspace(HalfspaceParams { normal: vec![1.0, 0.0], offset }).compile().unwrap()
}

#[test]
fn unguided_sampler_recovers_gaussian_moments() {
    let (mu, s) = ([1.0, -0.5], 0.7);
    let mixture = GaussianMixture::new(vec![1.0], vec![mu.to_vec()], vec![s]).unwrap();
    let drift = ScoreDrift::new(mixture, vp(), DriftKind::ReverseSde, DriftScaling::BetaScaled);
    let barrier = halfspace(-1e6);
    let cfg = ShieldConfig { steps: 1000, keep_states: false, ..Default::default() };
    let shield = Shield::new(cfg, &barrier, &drift, vp()).unwrap();
    let n = 5000;
    let recs = shield.sample_unconstrained(n, 11).unwrap();
    for (i, &m) in mu.iter().enumerate() {
        let xs: Vec<f64> = recs.iter().map(|r| r.final_state[i]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Standard errors of the sample mean and variance of a Gaussian.
        let se_mean = s / (n as f64).sqrt();
        let se_var = s * s * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - m).abs() < 3.0 * se_mean, "coord {i}: mean {mean}");
        assert!((var - s * s).abs() < 3.0 * se_var, "coord {i}: var {var}");
    }
    let xy: Vec<f64> = recs.iter().map(|r| (r.final_state[0] - mu[0]) * (r.final_state[1] - mu[1])).collect();
    let cov = xy.iter().sum::<f64>() / n as f64;
    assert!(cov.abs() < 3.0 * s * s / (n as f64).sqrt(), "cross covariance {cov}");
}

#[test]
fn guided_gmm_run_is_safe_and_unguided_is_not() {
    let drift = ScoreDrift::new(two_modes(), vp(), DriftKind::ReverseSde, DriftScaling::BetaScaled);
    let barrier = halfspace(2.0);
    let shield = Shield::new(ShieldConfig::default(), &barrier, &drift, vp()).unwrap();
    let guided = shield.sample_guided(1000, 5).unwrap();
    assert!(guided.iter().all(|r| r.summary.final_h >= 0.0));
    let unguided = shield.sample_unconstrained(1000, 5).unwrap();
    let audit = invariance_audit(&unguided, &barrier, 1e-6).unwrap();
    assert!(audit.violation_fraction > 0.05, "{}", audit.violation_fraction);
}

#[test]
fn logged_tube_values_match_recomputation() {
    let drift = ScoreDrift::new(two_modes(), vp(), DriftKind::ReverseSde, DriftScaling::BetaScaled);
    let barrier = halfspace(1.0);
    let shield = Shield::new(ShieldConfig::default(), &barrier, &drift, vp()).unwrap();
    let recs = shield.sample_guided(64, 8).unwrap();
    let audit = invariance_audit(&recs, &barrier, 1e-6).unwrap();
    assert!(audit.max_log_discrepancy() <= 1e-12, "{}", audit.max_log_discrepancy());
    assert_eq!(audit.tube_violations, 0);
    for r in &recs {
        assert_eq!(r.steps.len(), 201);
        assert_eq!(r.steps.first().unwrap().k, 200);
        assert_eq!(r.steps.last().unwrap().status, QpStatus::Terminal);
        assert_relative_eq!(r.summary.final_h, barrier.value(&r.final_state).unwrap());
    }
}

#[test]
fn output_is_independent_of_thread_count() {
    let drift = ScoreDrift::new(two_modes(), vp(), DriftKind::ReverseSde, DriftScaling::BetaScaled);
    let barrier = halfspace(2.0);
    let shield = Shield::new(ShieldConfig { steps: 50, ..Default::default() }, &barrier, &drift, vp()).unwrap();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(|| shield.sample_guided(40, 21).unwrap());
    let four = pool(4).install(|| shield.sample_guided(40, 21).unwrap());
    assert_eq!(one, four);
    assert_ne!(one, shield.sample_guided(40, 22).unwrap());
}

#[test]
fn unstable_config_rejected_at_construction() {
    let drift = ScoreDrift::new(two_modes(), vp(), DriftKind::ReverseSde, DriftScaling::BetaScaled);
    let barrier = halfspace(0.0);
    let cfg = ShieldConfig { steps: 10, class_k: ClassK::Linear { alpha: 10.0 }, ..Default::default() };
    assert!(matches!(Shield::new(cfg, &barrier, &drift, vp()), Err(ShieldError::Config(_))));
}

#[test]
fn unguided_runs_carry_no_kl_and_no_energy() {
    let drift = ScoreDrift::new(two_modes(), vp(), DriftKind::ReverseSde, DriftScaling::BetaScaled);
    let barrier = halfspace(2.0);
    let shield = Shield::new(ShieldConfig { steps: 40, ..Default::default() }, &barrier, &drift, vp()).unwrap();
    let recs = shield.sample(&Guidance::None, 20, 1).unwrap();
    let kl = kl_girsanov_estimate(&recs).unwrap();
    assert_eq!((kl.estimate, kl.stderr), (0.0, 0.0));
    let profile = energy_profile(&recs).unwrap();
    assert!(profile.mean_u_norm_sq.iter().all(|&e| e == 0.0));
    assert_eq!(profile.first_half_fraction, None);
}

#[test]
fn lorenz_training_data_satisfies_physics_barrier() {
    let params = LorenzParams::default();
    let barrier =
        BarrierSpec::PhysicsResidual(PhysicsResidualParams { dynamics: params, tolerance: 0.001 }).compile().unwrap();
    let data = lorenz_dataset(&params, 64, 1).unwrap();
    assert_eq!(data, lorenz_dataset(&params, 64, 1).unwrap());
    for x in &data {
        assert_eq!(x.len(), 153);
        assert_eq!(barrier.value(x).unwrap(), 0.001);
    }
}

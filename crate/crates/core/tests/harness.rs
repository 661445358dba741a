use simplex_reduction::diffusion::DiffusionSpec;
use simplex_reduction::harness::{
    hitting_time_scaling, run_ensemble, theorem_suite, EnsembleConfig, Expectation, Regime,
    RowOutcome, ScalingConfig, SuiteConfig,
};
use simplex_reduction::simplex::SimplexPoint;

#[test]
fn wilson_interval_coverage() {
    let spec = DiffusionSpec::isotropic(2, 1.0, 1.0).unwrap();
    let start = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
    let mut covered = 0;
    for seed in 0..100 {
        let cfg = EnsembleConfig::new(spec.clone(), start.clone(), 200, seed).unwrap();
        let est = run_ensemble(&cfg).unwrap();
        let (lo, hi) = est.wilson_ci_95[0];
        if lo <= 0.3 && 0.3 <= hi {
            covered += 1;
        }
    }
    assert!(covered >= 94, "covered {covered} of 100");
}

#[test]
fn small_suite_matrix() {
    let mut cfg = SuiteConfig::new(vec![2, 3], 2_000, 5);
    cfg.starts = vec![vec![0.5, 0.5]];
    let report = theorem_suite(&cfg).unwrap();
    assert_eq!(report.rows.len(), 8);
    for row in &report.rows {
        assert_eq!(row.estimate.trajectories, 2_000);
        assert_eq!(row.oracle.is_some(), row.n == 2);
        if row.regime == Regime::Isotropic {
            assert_eq!(row.expectation, Expectation::MatchesStart);
            assert_ne!(row.outcome, RowOutcome::Unexpected);
        }
    }
    let text = report.matrix();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("drifted"));
}

#[test]
fn scaling_doubles_with_tau() {
    let mut cfg = ScalingConfig::new(vec![2, 3], 500, 21);
    let base = hitting_time_scaling(&cfg).unwrap();
    cfg.tau = 2.0;
    let slow = hitting_time_scaling(&cfg).unwrap();
    for (a, b) in base.rows.iter().zip(&slow.rows) {
        assert_eq!(a.estimate.counts, b.estimate.counts);
        let rel = (b.mean_time / a.mean_time - 2.0).abs();
        assert!(rel < 1e-9);
        assert!((b.ratio - a.ratio).abs() < 1e-9);
    }
}

#[test]
fn dt_halving_is_reported() {
    let spec = DiffusionSpec::isotropic(2, 1.0, 1.0).unwrap();
    let mut cfg = EnsembleConfig::new(spec, SimplexPoint::new(vec![0.3, 0.7]).unwrap(), 2_000, 3)
        .unwrap()
        .expecting_start();
    cfg.check_dt_convergence = true;
    let est = run_ensemble(&cfg).unwrap();
    let conv = est.dt_convergence.unwrap();
    assert_eq!(conv.dt_half, est.dt / 2.0);
    assert!(conv.max_difference_se.is_finite());
}

//! Acceptance checks. Each test writes one `PASS`/`FAIL` line to stdout
//! (outside the test harness capture) and then asserts its criterion.
//!
//! The large ensembles are shared through `OnceLock`s so that the
//! step-size check reuses the runs of the absorption checks.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use num_complex::Complex64;
use simplex_reduction::diffusion::{sample_step, DiffusionSpec};
use simplex_reduction::harness::{
    chi_square_test, hitting_time_scaling, run_ensemble, run_episodes, run_records, standard_error,
    wilson_interval, AbsorptionEstimate, EnsembleConfig, Regime, ScalingConfig, DT_CONVERGENCE_SE,
};
use simplex_reduction::oracle::{
    biased_closed_form, flux_hitting_probability, green_hitting_probability, hitting_probability_ode,
    sturm_liouville_modes, Profile1D, DEFAULT_MODES,
};
use simplex_reduction::quantum::{
    decohere, random_density, random_unitary, run_reduction_episode, trace_norm, CMatrix, ProjectorFamily,
    ReductionState,
};
use simplex_reduction::rng::trajectory_stream;
use simplex_reduction::simplex::SimplexPoint;

const M: u64 = 100_000;
const PASS_P: f64 = 1e-3;
const REJECT_P: f64 = 1e-6;

fn report(name: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let tag = if pass { "PASS" } else { "FAIL" };
    writeln!(out, "[acceptance] {tag} {name}: {detail}").unwrap();
    out.flush().unwrap();
}

fn ensemble(spec: DiffusionSpec, start: Vec<f64>, seed: u64) -> AbsorptionEstimate {
    let mut cfg = EnsembleConfig::new(spec, SimplexPoint::new(start).unwrap(), M, seed).unwrap();
    cfg.check_dt_convergence = true;
    run_ensemble(&cfg).unwrap()
}

fn isotropic_runs() -> &'static Vec<(Vec<f64>, AbsorptionEstimate, f64)> {
    static RUNS: OnceLock<Vec<(Vec<f64>, AbsorptionEstimate, f64)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let starts = [vec![0.3, 0.7], vec![0.5, 0.3, 0.2], vec![0.4, 0.3, 0.2, 0.1]];
        starts
            .into_iter()
            .enumerate()
            .map(|(i, start)| {
                let clock = Instant::now();
                let spec = DiffusionSpec::isotropic(start.len(), 1.0, 1.0).unwrap();
                let est = ensemble(spec, start.clone(), 100 + i as u64);
                (start, est, clock.elapsed().as_secs_f64())
            })
            .collect()
    })
}

fn anisotropic_run() -> &'static AbsorptionEstimate {
    static RUN: OnceLock<AbsorptionEstimate> = OnceLock::new();
    RUN.get_or_init(|| ensemble(Regime::Anisotropic.spec(3, 1.0).unwrap(), vec![1.0 / 3.0; 3], 200))
}

fn inhomogeneous_run() -> &'static AbsorptionEstimate {
    static RUN: OnceLock<AbsorptionEstimate> = OnceLock::new();
    RUN.get_or_init(|| {
        let spec = DiffusionSpec::unit_interval(Arc::new(|x: &[f64]| 1.0 + x[0]), 0.0, 1.0).unwrap();
        ensemble(spec, vec![0.5, 0.5], 300)
    })
}

fn drifted_run() -> &'static AbsorptionEstimate {
    static RUN: OnceLock<AbsorptionEstimate> = OnceLock::new();
    RUN.get_or_init(|| {
        let spec = DiffusionSpec::unit_interval(Arc::new(|_: &[f64]| 1.0), 1.0, 1.0).unwrap();
        ensemble(spec, vec![0.5, 0.5], 400)
    })
}

/// Gambler's ruin on `nodes` lattice steps with the jump bias of drift `nu`
/// and diffusivity `d`: probability of reaching the top from node `k`.
fn biased_walk_hitting(nu: f64, d: f64, nodes: u64, k: u64) -> f64 {
    let h = 1.0 / nodes as f64;
    let up = 0.5 * (1.0 + nu * h / (2.0 * d));
    let ratio: f64 = (1.0 - up) / up;
    (1.0 - ratio.powi(k as i32)) / (1.0 - ratio.powi(nodes as i32))
}

#[test]
fn isotropic_absorption_follows_the_start() {
    let runs = isotropic_runs();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut total = 0.0;
    for (start, est, secs) in runs {
        let p = chi_square_test(&est.counts, start).unwrap().p_value;
        pass &= p > PASS_P;
        total += secs;
        parts.push(format!("n={} p={p:.3e}", start.len()));
    }
    report(
        "isotropic absorption follows the start vector",
        pass,
        &format!("{} (M={M}, {total:.0}s including dt/2 reruns)", parts.join(", ")),
    );
    assert!(pass);
}

#[test]
fn anisotropic_correlation_departs_from_the_start() {
    let est = anisotropic_run();
    let p = chi_square_test(&est.counts, &[1.0 / 3.0; 3]).unwrap().p_value;
    let pass = p < REJECT_P;
    report(
        "anisotropic correlation rejects the uniform prediction",
        pass,
        &format!(
            "n=3 C=diag(4,1) from the barycenter, counts {:?}, p={p:.3e} (needs < {REJECT_P:e})",
            est.counts
        ),
    );
    assert!(pass, "uniform prediction not rejected: p = {p}");
}

#[test]
fn inhomogeneous_diffusion_matches_its_oracles() {
    let exact = 1.5f64.ln() / 2f64.ln();
    let profile = Profile1D::linear(1.0);
    let ode = hitting_probability_ode(&profile, 0.5).unwrap();
    let flux = flux_hitting_probability(&profile, 0.5, DEFAULT_MODES).unwrap();
    let green = green_hitting_probability(&profile, 0.5).unwrap();
    let spread = [ode, flux, green, exact]
        .iter()
        .flat_map(|a| [ode, flux, green, exact].map(|b| (a - b).abs()))
        .fold(0.0, f64::max);

    let est = inhomogeneous_run();
    let (lo, hi) = wilson_interval(est.counts[0], est.trajectories, 0.99);
    let covered = lo <= exact && exact <= hi;
    let p_half = chi_square_test(&est.counts, &[0.5, 0.5]).unwrap().p_value;
    let pass = spread < 1e-4 && covered && p_half < REJECT_P;
    report(
        "inhomogeneous diffusion follows the interval oracle",
        pass,
        &format!(
            "frequency {:.5}, 99% CI [{lo:.5}, {hi:.5}] vs {exact:.5}; oracle spread {spread:.1e}; p(0.5)={p_half:.1e}",
            est.frequencies[0]
        ),
    );
    assert!(pass);
}

#[test]
fn drift_biases_absorption() {
    let walk = biased_walk_hitting(1.0, 1.0, 20_000, 10_000);
    let closed = biased_closed_form(1.0, 1.0, 0.5).unwrap();
    let est = drifted_run();
    let se = standard_error(walk, est.trajectories);
    let z = (est.frequencies[0] - walk).abs() / se;
    let p_half = chi_square_test(&est.counts, &[0.5, 0.5]).unwrap().p_value;
    let limit = [0.0, 1e-13, -1e-13, 1e-15]
        .iter()
        .flat_map(|nu| [0.1, 0.5, 0.9].map(|a| (biased_closed_form(*nu, 1.0, a).unwrap() - a).abs()))
        .fold(0.0, f64::max);
    let pass = z < 3.0 && p_half < REJECT_P && limit < 1e-12 && (closed - walk).abs() < 1e-6;
    report(
        "drift biases absorption as the biased-walk oracle predicts",
        pass,
        &format!(
            "frequency {:.5} vs {walk:.5} ({z:.2} SE), closed form {closed:.6}; p(0.5)={p_half:.1e}; zero-drift limit error {limit:.1e}",
            est.frequencies[0]
        ),
    );
    assert!(pass);
}

#[test]
fn increment_covariance_is_projected_isotropic() {
    let sigma2 = 2.0;
    let draws = 1_000_000u64;
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [2usize, 3, 5, 8] {
        let spec = DiffusionSpec::isotropic(n, sigma2, 1.0).unwrap();
        let pt = SimplexPoint::barycenter(n).unwrap();
        let dt = spec.default_dt().unwrap();
        let mut rng = trajectory_stream(500 + n as u64, 0);
        let mut sum = vec![0.0; n];
        let mut prod = vec![0.0; n * n];
        let mut prod2 = vec![0.0; n * n];
        for _ in 0..draws {
            let dp = sample_step(&spec, &pt, dt, &mut rng).unwrap().dp;
            for j in 0..n {
                sum[j] += dp[j];
                for k in 0..n {
                    let v = dp[j] * dp[k];
                    prod[j * n + k] += v;
                    prod2[j * n + k] += v * v;
                }
            }
        }
        let m = draws as f64;
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for k in 0..n {
                let cov = prod[j * n + k] / m - sum[j] * sum[k] / (m * m);
                let second = prod[j * n + k] / m;
                let se = ((prod2[j * n + k] / m - second * second) / m).sqrt();
                let target = sigma2 * dt * (if j == k { 1.0 } else { 0.0 } - 1.0 / n as f64);
                worst = worst.max((cov - target).abs() / se);
            }
        }
        pass &= worst < 5.0;
        parts.push(format!("n={n} worst {worst:.2} SE"));
    }
    report(
        "step covariance equals σ²dt(δ_jk − 1/n)",
        pass,
        &format!("{} over {draws} steps", parts.join(", ")),
    );
    assert!(pass);
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn trace(m: &CMatrix) -> Complex64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

#[test]
fn density_matrix_reduction_algebra() {
    let sizes = [1usize, 2, 3];
    let dim: usize = sizes.iter().sum();
    let mut failures = Vec::new();

    let mut rng = trajectory_stream(600, 0);
    let u = random_unitary(dim, &mut rng);
    let family = ProjectorFamily::from_unitary(&u, &sizes).unwrap();
    // Overlapping and incomplete families are refused.
    let mut broken = family.projectors().to_vec();
    broken[1] = broken[1].clone() + broken[0].clone();
    if ProjectorFamily::new(broken).is_ok() {
        failures.push("overlapping family accepted".to_string());
    }
    if ProjectorFamily::new(family.projectors()[..2].to_vec()).is_ok() {
        failures.push("incomplete family accepted".to_string());
    }

    let spec = DiffusionSpec::isotropic(3, 1.0, 1.0).unwrap();
    let dt = spec.default_dt().unwrap();
    let mut worst_collapse: f64 = 0.0;
    let mut worst_algebra: f64 = 0.0;
    for i in 0..100u64 {
        let mut rng = trajectory_stream(601, i);
        let u = random_unitary(dim, &mut rng);
        let family = ProjectorFamily::from_unitary(&u, &sizes).unwrap();
        let rho = random_density(dim, &mut rng).unwrap();
        let split = decohere(&rho, &family).unwrap();
        let again = decohere(&split.rho0, &family).unwrap();
        worst_algebra = worst_algebra
            .max(max_abs(&(again.rho0.matrix() - split.rho0.matrix())))
            .max(trace_norm(&again.rho1))
            .max(trace(&split.rho1).norm());
        for j in 0..3 {
            let before = trace(&family.sandwich(j, rho.matrix())).re;
            let after = trace(&family.sandwich(j, split.rho0.matrix())).re;
            worst_algebra = worst_algebra.max((before - after).abs());
        }

        let state = ReductionState::new(&split.rho0, family.clone()).unwrap();
        let (record, collapsed) = run_reduction_episode(&state, &spec, dt, &mut rng, 10_000_000).unwrap();
        let k = record.absorbed_vertex.unwrap();
        let block = family.sandwich(k, split.rho0.matrix());
        let direct = &block / trace(&block);
        worst_collapse = worst_collapse.max(max_abs(&(collapsed.matrix() - direct)));
    }
    if worst_algebra > 1e-12 {
        failures.push(format!("algebra deviation {worst_algebra:.1e}"));
    }
    if worst_collapse > 1e-8 {
        failures.push(format!("collapse deviation {worst_collapse:.1e}"));
    }
    let pass = failures.is_empty();
    report(
        "density-matrix layer: projectors, decoherence and path-independent collapse",
        pass,
        &format!(
            "100 random 3-block episodes, collapse deviation {worst_collapse:.1e}, algebra deviation {worst_algebra:.1e}{}",
            if pass { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    );
    assert!(pass);
}

#[test]
fn spectral_oracle_on_constant_diffusion() {
    let profile = Profile1D::constant(1.0).with_grid(512);
    let sol = sturm_liouville_modes(&profile, 8).unwrap();
    let eig_err = (0..5)
        .map(|i| {
            let exact = ((i + 1) as f64 * PI).powi(2);
            (sol.eigenvalues[i] - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    let flux_err = [0.1, 0.25, 0.5, 0.75, 0.9]
        .iter()
        .map(|a| (flux_hitting_probability(&profile, *a, DEFAULT_MODES).unwrap() - a).abs())
        .fold(0.0, f64::max);
    let pass = eig_err < 1e-4 && flux_err < 1e-4;
    report(
        "spectral oracle reproduces the constant-diffusion solution",
        pass,
        &format!("eigenvalue relative error {eig_err:.1e} (modes 1-5), flux-series error {flux_err:.1e}"),
    );
    assert!(pass);
}

#[test]
fn hitting_time_grows_with_n_and_tau() {
    let mut cfg = ScalingConfig::new(vec![2, 3, 4, 5], 10_000, 800);
    let base = hitting_time_scaling(&cfg).unwrap();
    cfg.tau = 2.0;
    let slow = hitting_time_scaling(&cfg).unwrap();
    let mut doubled = true;
    for (a, b) in base.rows.iter().zip(&slow.rows) {
        let se = (b.standard_error.powi(2) + 4.0 * a.standard_error.powi(2)).sqrt();
        doubled &= (b.mean_time - 2.0 * a.mean_time).abs() <= 3.0 * se;
    }
    let pass = base.strictly_increasing && doubled;
    let table: Vec<String> = base
        .rows
        .iter()
        .map(|r| format!("T({})={:.4}±{:.4} T/nτ={:.4}", r.n, r.mean_time, r.standard_error, r.ratio))
        .collect();
    report(
        "mean hitting time increases with n and scales with τ",
        pass,
        &format!(
            "{}; strictly increasing: {}; τ doubling within error: {doubled}",
            table.join(", "),
            base.strictly_increasing
        ),
    );
    assert!(pass);
}

fn all_equal<T: PartialEq>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

#[test]
fn ensembles_do_not_depend_on_worker_count() {
    let spec = Regime::Inhomogeneous.spec(4, 1.0).unwrap();
    let start = SimplexPoint::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
    let mut cfg = EnsembleConfig::new(spec.clone(), start, 2_000, 900).unwrap().expecting_start();
    let mut records = Vec::new();
    let mut estimates = Vec::new();
    for workers in [1, 4, 8] {
        cfg.workers = workers;
        records.push(run_records(&cfg).unwrap());
        estimates.push(run_ensemble(&cfg).unwrap());
    }
    let mut rng = trajectory_stream(901, 0);
    let family = ProjectorFamily::from_unitary(&random_unitary(4, &mut rng), &[1, 1, 1, 1]).unwrap();
    let rho = decohere(&random_density(4, &mut rng).unwrap(), &family).unwrap().rho0;
    let state = ReductionState::new(&rho, family).unwrap();
    let dt = spec.default_dt().unwrap();
    let episodes: Vec<Vec<(Option<usize>, u64, CMatrix)>> = [1, 4, 8]
        .iter()
        .map(|w| {
            run_episodes(&state, &spec, dt, 902, 200, 10_000_000, *w)
                .unwrap()
                .into_iter()
                .map(|o| (o.record.absorbed_vertex, o.record.steps_taken, o.collapsed.into_matrix()))
                .collect()
        })
        .collect();
    let pass = all_equal(&records) && all_equal(&estimates) && all_equal(&episodes);
    report(
        "identical seeds give bit-identical results on 1, 4 and 8 workers",
        pass,
        "2000 trajectories and 200 reduction episodes compared record by record",
    );
    assert!(pass);
}

#[test]
fn absorption_is_converged_in_the_step_size() {
    let mut rows = Vec::new();
    for (start, est, _) in isotropic_runs() {
        rows.push((format!("isotropic n={}", start.len()), est));
    }
    rows.push(("anisotropic n=3".into(), anisotropic_run()));
    rows.push(("inhomogeneous n=2".into(), inhomogeneous_run()));
    rows.push(("drifted n=2".into(), drifted_run()));
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, est) in rows {
        let conv = est.dt_convergence.as_ref().unwrap();
        pass &= conv.passed;
        parts.push(format!("{name} {:.2}", conv.max_difference_se));
    }
    report(
        "frequencies at dt and dt/2 agree",
        pass,
        &format!("largest difference in combined SE (limit {DT_CONVERGENCE_SE}): {}", parts.join(", ")),
    );
    assert!(pass);
}

//! Execution of a resolved configuration and the files it writes.
//!
//! Every mode writes `config.resolved.toml`. With CSV output it writes
//! `<mode>.csv`, and with report output it writes `report.json` plus
//! mode-specific extras. CSV floats use `{:.16e}`, so files round-trip and
//! compare byte for byte across reruns and worker counts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;
use simplex_reduction::diffusion::DiffusionSpec;
use simplex_reduction::harness::{
    chi_square_test, hitting_time_scaling, run_ensemble, run_episodes, theorem_suite, wilson_interval,
    ChiSquare, EnsembleConfig, Expectation, Expected, Provenance, Regime, RowOutcome, ScalingConfig,
    SuiteConfig, Verdict,
};
use simplex_reduction::oracle::{
    biased_closed_form, flux_series, green_hitting_probability, hitting_probability_ode, sturm_liouville_modes,
    Profile1D, FLUX_TOLERANCE,
};
use simplex_reduction::quantum::fixture::{Fixture, MatrixText};
use simplex_reduction::quantum::{decohere, ReductionState};
use simplex_reduction::simplex::{SimplexChart, SimplexPoint};

use crate::config::{
    ExpectedSpec, ExperimentConfig, Mode, OracleSection, Overrides, ProfileKind, ProfileSection,
    QuantumSection, ScalingSection, SimulateSection, SuiteSection,
};

/// Largest disagreement tolerated between interval oracles.
pub const ORACLE_AGREEMENT: f64 = 1e-4;

pub const SIMULATE_COLUMNS: &[&str] = &[
    "vertex",
    "count",
    "frequency",
    "wilson_lo",
    "wilson_hi",
    "expected",
    "standard_error",
];
pub const ORACLE_COLUMNS: &[&str] = &["alpha", "ode", "flux", "flux_residual", "green", "closed_form"];
pub const SUITE_COLUMNS: &[&str] = &[
    "n",
    "start",
    "regime",
    "expectation",
    "p_value",
    "verdict",
    "outcome",
    "counts",
    "oracle",
    "oracle_frequency",
    "oracle_standard_error",
    "mean_hitting_time",
];
pub const SCALING_COLUMNS: &[&str] = &["n", "trajectories", "mean_time", "standard_error", "ratio"];
pub const QUANTUM_COLUMNS: &[&str] = &["episode", "block", "hitting_time", "steps"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    /// Completed and every checked expectation held.
    Ok,
    /// Completed, but a checked expectation failed.
    ExpectationFailed,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::ExpectationFailed => 2,
        }
    }
}

/// What a run produced: its status, a short human summary and the files.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub status: Status,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn joined<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

pub fn build_profile(p: &ProfileSection) -> Result<Profile1D> {
    let missing = |name: &str| anyhow::anyhow!("{name}: missing");
    let profile = match p.kind {
        ProfileKind::Constant => Profile1D::constant(p.value.ok_or_else(|| missing("value"))?),
        ProfileKind::Linear => Profile1D::linear(p.c.ok_or_else(|| missing("c"))?),
        ProfileKind::Sinusoidal => Profile1D::sinusoidal(p.c.ok_or_else(|| missing("c"))?),
        ProfileKind::Tabulated => Profile1D::tabulated(
            p.xs.clone().ok_or_else(|| missing("xs"))?,
            p.ds.clone().ok_or_else(|| missing("ds"))?,
        )?,
    };
    let mut profile = profile.with_nu(p.nu.unwrap_or(0.0));
    if let Some(g) = p.grid {
        profile = profile.with_grid(g);
    }
    Ok(profile)
}

/// The motion described by a `[simulate]` section.
pub fn simulate_spec(s: &SimulateSection) -> Result<DiffusionSpec> {
    let n = s.start.as_ref().map_or(0, Vec::len);
    let tau = s.tau.unwrap_or(1.0);
    if let Some(c) = &s.correlation {
        let m = n - 1;
        let rows: Vec<f64> = c.iter().flatten().copied().collect();
        let matrix = DMatrix::from_row_slice(m, m, &rows);
        let drift = s.drift.clone().unwrap_or_else(|| vec![0.0; m]);
        let chart = Arc::new(SimplexChart::new(n)?);
        return DiffusionSpec::constant(chart, matrix, drift, tau)
            .map_err(|e| anyhow::anyhow!("simulate.correlation: {e}"));
    }
    if let Some(p) = &s.profile {
        let profile = build_profile(p)?;
        return Ok(DiffusionSpec::unit_interval(profile.diffusion_fn(), profile.nu, tau)?);
    }
    let regime = s.regime.map(Regime::from).unwrap_or(Regime::Isotropic);
    Ok(regime.spec(n, tau)?)
}

/// Interval oracle for the probability of absorption at vertex 0 of a
/// two-state `[simulate]` run.
fn simulate_oracle(s: &SimulateSection, alpha: f64) -> Result<f64> {
    if alpha == 0.0 || alpha == 1.0 {
        return Ok(alpha);
    }
    if let Some(c) = &s.correlation {
        // Chart variance 4D and chart drift √2 ν on the default chart.
        let d = c[0][0] / 4.0;
        let nu = s.drift.as_ref().map_or(0.0, |v| v[0]) / std::f64::consts::SQRT_2;
        return Ok(biased_closed_form(nu, d, alpha)?);
    }
    if let Some(p) = &s.profile {
        return Ok(hitting_probability_ode(&build_profile(p)?, alpha)?);
    }
    Ok(s.regime.map(Regime::from).unwrap_or(Regime::Isotropic).oracle(alpha)?)
}

/// Runs a resolved configuration and writes its outputs.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let mode = cfg.mode.context("configuration is not resolved")?;
    let out = cfg.out.clone().context("configuration is not resolved")?;
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut files = Vec::new();
    let echo = out.join("config.resolved.toml");
    fs::write(&echo, cfg.to_toml_string()?).with_context(|| format!("cannot write {}", echo.display()))?;
    files.push(echo);

    let seed = cfg.seed.unwrap_or(0);
    let workers = cfg.workers.unwrap_or(0);
    let result = match mode {
        Mode::Simulate => simulate(cfg.simulate.as_ref().context("missing [simulate]")?, seed, workers)?,
        Mode::Oracle => oracle(cfg.oracle.as_ref().context("missing [oracle]")?)?,
        Mode::TheoremSuite => suite(cfg.theorem_suite.as_ref().context("missing [theorem-suite]")?, seed, workers)?,
        Mode::Scaling => scaling(cfg.scaling.as_ref().context("missing [scaling]")?, seed, workers)?,
        Mode::QuantumDemo => quantum(cfg.quantum_demo.as_ref().context("missing [quantum-demo]")?, seed, workers)?,
    };

    let format = cfg.format.unwrap_or_default();
    if format.csv() {
        let path = out.join(format!("{mode}.csv"));
        write_csv(&path, result.columns, &result.rows)?;
        files.push(path);
    }
    if format.report() {
        let path = out.join("report.json");
        let report = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "mode": mode.to_string(),
            "config": cfg,
            "csv_columns": result.columns,
            "status": result.status,
            "results": result.report,
        });
        fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        files.push(path);
        for (name, text) in &result.extras {
            let path = out.join(name);
            fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
            files.push(path);
        }
    }
    Ok(RunSummary {
        status: result.status,
        summary: result.summary,
        files,
    })
}

fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

struct ModeResult {
    status: Status,
    summary: String,
    columns: &'static [&'static str],
    rows: Vec<Vec<String>>,
    report: serde_json::Value,
    /// Additional report files, by name.
    extras: Vec<(String, String)>,
}

fn simulate(s: &SimulateSection, seed: u64, workers: usize) -> Result<ModeResult> {
    let start = s.start.clone().context("simulate.start: missing")?;
    let spec = simulate_spec(s)?;
    let point = SimplexPoint::new(start.clone())?;
    let mut ens = EnsembleConfig::new(spec, point, s.trajectories.unwrap_or(1), seed)?;
    ens.dt = s.dt.context("simulate.dt: missing")?;
    ens.max_steps = s.max_steps.unwrap_or(ens.max_steps);
    ens.workers = workers;
    ens.check_dt_convergence = s.check_dt_convergence.unwrap_or(false);
    ens.run_options.crossing = s.crossing.unwrap_or_default();
    ens.expected = match s.expected.as_ref() {
        Some(ExpectedSpec::Named(name)) if name == "start" => Some(Expected {
            probabilities: start.clone(),
            provenance: Provenance::Theorem,
        }),
        Some(ExpectedSpec::Named(name)) if name == "oracle" => {
            let p = simulate_oracle(s, start[0])?;
            Some(Expected {
                probabilities: vec![p, 1.0 - p],
                provenance: Provenance::Oracle,
            })
        }
        Some(ExpectedSpec::Values(v)) => Some(Expected {
            probabilities: v.clone(),
            provenance: Provenance::None,
        }),
        _ => None,
    };
    let est = run_ensemble(&ens)?;
    let se = est.standard_errors();
    let rows = (0..est.counts.len())
        .map(|k| {
            vec![
                k.to_string(),
                est.counts[k].to_string(),
                num(est.frequencies[k]),
                num(est.wilson_ci_95[k].0),
                num(est.wilson_ci_95[k].1),
                opt_num(est.expected.as_ref().map(|e| e.probabilities[k])),
                num(se[k]),
            ]
        })
        .collect();
    let rejected = est.verdict() == Some(Verdict::Reject);
    let unconverged = est.dt_convergence.as_ref().is_some_and(|c| !c.passed);
    let status = if rejected || unconverged {
        Status::ExpectationFailed
    } else {
        Status::Ok
    };
    let mut summary = format!(
        "simulate: {} trajectories, counts [{}], mean hitting time {:.4}",
        est.trajectories,
        joined(&est.counts),
        est.mean_hitting_time
    );
    if let Some(c) = &est.chi_square {
        summary += &format!(", chi-square p = {:.3e} ({:?})", c.p_value, c.verdict());
    }
    if let Some(c) = &est.dt_convergence {
        summary += &format!(
            ", dt halving max difference {:.2} SE ({})",
            c.max_difference_se,
            if c.passed { "converged" } else { "not converged" }
        );
    }
    Ok(ModeResult {
        status,
        summary,
        columns: SIMULATE_COLUMNS,
        rows,
        report: serde_json::to_value(&est)?,
        extras: Vec::new(),
    })
}

#[derive(Serialize)]
struct OraclePoint {
    alpha: f64,
    ode: f64,
    flux: Option<f64>,
    flux_residual: Option<f64>,
    green: Option<f64>,
    closed_form: Option<f64>,
    max_disagreement: f64,
}

fn oracle(o: &OracleSection) -> Result<ModeResult> {
    let section = o.profile.as_ref().context("oracle.profile: missing")?;
    let profile = build_profile(section)?;
    let modes = o.modes.context("oracle.modes: missing")?;
    let drifted = profile.nu != 0.0;
    let constant = profile.diffusivity.is_constant();
    let mut points = Vec::new();
    for &alpha in o.alphas.as_deref().unwrap_or_default() {
        let point = if alpha == 0.0 || alpha == 1.0 {
            // Boundary identity: absorbed where it starts.
            OraclePoint {
                alpha,
                ode: alpha,
                flux: (!drifted).then_some(alpha),
                flux_residual: (!drifted).then_some(0.0),
                green: (!drifted).then_some(alpha),
                closed_form: constant.then_some(alpha),
                max_disagreement: 0.0,
            }
        } else {
            let ode = hitting_probability_ode(&profile, alpha)?;
            let series = if drifted {
                None
            } else {
                Some(flux_series(&profile, alpha, modes)?)
            };
            let green = if drifted {
                None
            } else {
                Some(green_hitting_probability(&profile, alpha)?)
            };
            let closed_form = if constant {
                Some(biased_closed_form(profile.nu, profile.d(0.0), alpha)?)
            } else {
                None
            };
            let flux = series.as_ref().map(|s| s.value);
            let max_disagreement = [flux, green, closed_form]
                .into_iter()
                .flatten()
                .map(|v| (v - ode).abs())
                .fold(0.0, f64::max);
            OraclePoint {
                alpha,
                ode,
                flux,
                flux_residual: series.map(|s| s.residual),
                green,
                closed_form,
                max_disagreement,
            }
        };
        points.push(point);
    }
    let worst = points.iter().map(|p| p.max_disagreement).fold(0.0, f64::max);
    let series_ok = points.iter().all(|p| p.flux_residual.is_none_or(|r| r <= FLUX_TOLERANCE));
    let status = if worst <= ORACLE_AGREEMENT && series_ok {
        Status::Ok
    } else {
        Status::ExpectationFailed
    };
    let spectrum = if drifted {
        serde_json::Value::Null
    } else {
        let sol = sturm_liouville_modes(&profile, modes)?;
        json!({
            "eigenvalues": sol.eigenvalues,
            "grid_convergence": sol.convergence,
            "orthonormality_error": sol.orthonormality_error(),
        })
    };
    let rows = points
        .iter()
        .map(|p| {
            vec![
                num(p.alpha),
                num(p.ode),
                opt_num(p.flux),
                opt_num(p.flux_residual),
                opt_num(p.green),
                opt_num(p.closed_form),
            ]
        })
        .collect();
    let summary = format!(
        "oracle: {} points, largest disagreement {:.2e}{}",
        points.len(),
        worst,
        if series_ok { "" } else { ", flux series not converged" }
    );
    Ok(ModeResult {
        status,
        summary,
        columns: ORACLE_COLUMNS,
        rows,
        report: json!({
            "points": points,
            "max_disagreement": worst,
            "agreement_tolerance": ORACLE_AGREEMENT,
            "flux_tolerance": FLUX_TOLERANCE,
            "spectrum": spectrum,
        }),
        extras: Vec::new(),
    })
}

fn suite(s: &SuiteSection, seed: u64, workers: usize) -> Result<ModeResult> {
    let mut cfg = SuiteConfig::new(s.n_values.clone().unwrap_or_default(), s.trajectories.unwrap_or(1), seed);
    cfg.starts = s.starts.clone().unwrap_or_default();
    cfg.workers = workers;
    cfg.tau = s.tau.unwrap_or(cfg.tau);
    cfg.max_steps = s.max_steps.unwrap_or(cfg.max_steps);
    cfg.check_dt_convergence = s.check_dt_convergence.unwrap_or(false);
    let report = theorem_suite(&cfg)?;
    let label = |v: &serde_json::Value| v.as_str().unwrap_or_default().to_string();
    let mut rows = Vec::new();
    for r in &report.rows {
        let p_value = r.estimate.chi_square.as_ref().map(|c| c.p_value);
        rows.push(vec![
            r.n.to_string(),
            joined(&r.start),
            r.regime.to_string(),
            label(&serde_json::to_value(r.expectation)?),
            opt_num(p_value),
            label(&serde_json::to_value(r.verdict)?),
            label(&serde_json::to_value(r.outcome)?),
            joined(&r.estimate.counts),
            opt_num(r.oracle.as_ref().map(|o| o.value)),
            opt_num(r.oracle.as_ref().map(|o| o.frequency)),
            opt_num(r.oracle.as_ref().map(|o| o.standard_error)),
            num(r.estimate.mean_hitting_time),
        ]);
    }
    let status = if report.any_unexpected() {
        Status::ExpectationFailed
    } else {
        Status::Ok
    };
    let unexpected = report
        .rows
        .iter()
        .filter(|r| r.outcome == RowOutcome::Unexpected)
        .count();
    let matrix = report.matrix();
    let summary = format!("theorem-suite: {} rows, {} unexpected\n{}", report.rows.len(), unexpected, matrix);
    Ok(ModeResult {
        status,
        summary,
        columns: SUITE_COLUMNS,
        rows,
        report: serde_json::to_value(&report)?,
        extras: vec![("matrix.txt".into(), matrix)],
    })
}

fn scaling(s: &ScalingSection, seed: u64, workers: usize) -> Result<ModeResult> {
    let mut cfg = ScalingConfig::new(s.n_values.clone().unwrap_or_default(), s.trajectories.unwrap_or(1), seed);
    cfg.workers = workers;
    cfg.tau = s.tau.unwrap_or(cfg.tau);
    cfg.sigma2 = s.sigma2.unwrap_or(cfg.sigma2);
    cfg.max_steps = s.max_steps.unwrap_or(cfg.max_steps);
    let report = hitting_time_scaling(&cfg)?;
    let rows = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.estimate.trajectories.to_string(),
                num(r.mean_time),
                num(r.standard_error),
                num(r.ratio),
            ]
        })
        .collect();
    let status = if report.strictly_increasing {
        Status::Ok
    } else {
        Status::ExpectationFailed
    };
    let means: Vec<String> = report.rows.iter().map(|r| format!("{:.4}", r.mean_time)).collect();
    let summary = format!(
        "scaling: mean hitting times [{}], {}",
        means.join(", "),
        if report.strictly_increasing {
            "strictly increasing in n"
        } else {
            "not strictly increasing in n"
        }
    );
    Ok(ModeResult {
        status,
        summary,
        columns: SCALING_COLUMNS,
        rows,
        report: serde_json::to_value(&report)?,
        extras: Vec::new(),
    })
}

/// Collapsed state of each block that was selected at least once.
#[derive(Serialize)]
struct CollapsedFile {
    dim: usize,
    outcomes: Vec<CollapsedOutcome>,
}

#[derive(Serialize)]
struct CollapsedOutcome {
    block: usize,
    count: u64,
    density: MatrixText,
}

fn quantum(q: &QuantumSection, seed: u64, workers: usize) -> Result<ModeResult> {
    let path = q.fixture.as_ref().context("quantum-demo.fixture: missing")?;
    let fixture = Fixture::load(path)?;
    let family = fixture.family()?;
    let rho = fixture.density_matrix()?;
    let split = decohere(&rho, &family)?;
    let initial_residual = split.trace_norm;
    let rho = if q.decohere.unwrap_or(true) { split.rho0 } else { rho };
    let state = ReductionState::new(&rho, family.clone())?;
    let k = family.len();
    let regime = Regime::from(q.regime.context("quantum-demo.regime: missing")?);
    let spec = regime.spec(k, q.tau.unwrap_or(1.0))?;
    let weights = state.probabilities().coords().to_vec();
    let episodes = q.episodes.unwrap_or(1);
    let outcomes = run_episodes(
        &state,
        &spec,
        q.dt.context("quantum-demo.dt: missing")?,
        seed,
        episodes,
        q.max_steps.unwrap_or(simplex_reduction::harness::DEFAULT_MAX_STEPS),
        workers,
    )?;

    let mut counts = vec![0u64; k];
    let mut collapsed: Vec<Option<MatrixText>> = vec![None; k];
    let mut rows = Vec::with_capacity(outcomes.len());
    for (i, o) in outcomes.iter().enumerate() {
        let block = o.record.absorbed_vertex.context("episode ended without a selected block")?;
        counts[block] += 1;
        if collapsed[block].is_none() {
            collapsed[block] = Some(MatrixText::from_matrix(o.collapsed.matrix()));
        }
        rows.push(vec![
            i.to_string(),
            block.to_string(),
            num(o.record.hitting_time),
            o.record.steps_taken.to_string(),
        ]);
    }
    let chi: ChiSquare = chi_square_test(&counts, &weights)?;
    let status = if chi.verdict() == Verdict::Reject && regime.expectation(k) == Expectation::MatchesStart {
        Status::ExpectationFailed
    } else {
        Status::Ok
    };
    let frequencies: Vec<f64> = counts.iter().map(|c| *c as f64 / episodes as f64).collect();
    let intervals: Vec<(f64, f64)> = counts.iter().map(|c| wilson_interval(*c, episodes, 0.95)).collect();
    let file = CollapsedFile {
        dim: family.dim(),
        outcomes: collapsed
            .into_iter()
            .enumerate()
            .filter_map(|(block, m)| {
                m.map(|density| CollapsedOutcome {
                    block,
                    count: counts[block],
                    density,
                })
            })
            .collect(),
    };
    let summary = format!(
        "quantum-demo: {episodes} episodes over {k} blocks, weights [{}], counts [{}], chi-square p = {:.3e}",
        weights.iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>().join(", "),
        joined(&counts),
        chi.p_value
    );
    let report = json!({
        "blocks": k,
        "initial_residual_trace_norm": initial_residual,
        "weights": weights,
        "counts": counts,
        "frequencies": frequencies,
        "wilson_ci_95": intervals,
        "chi_square": chi,
    });
    Ok(ModeResult {
        status,
        summary,
        columns: QUANTUM_COLUMNS,
        rows,
        report,
        extras: vec![("collapsed.toml".into(), toml::to_string(&file)?)],
    })
}

/// Loads a file if given, applies flags and resolves for `mode`.
pub fn resolve(mode: Mode, config: Option<&Path>, flags: &Overrides) -> Result<ExperimentConfig> {
    let file = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    file.resolve(mode, flags)
}

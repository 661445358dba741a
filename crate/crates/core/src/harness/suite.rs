use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use super::{run_ensemble, standard_error, AbsorptionEstimate, EnsembleConfig, Expected, Provenance, Verdict};
use crate::diffusion::{ConstantDrift, DiffusionSpec, ScalarFn, ScaledCorrelation};
use crate::error::{Error, Result};
use crate::oracle::{biased_closed_form, hitting_probability_ode, Profile1D};
use crate::simplex::{SimplexChart, SimplexPoint};

/// Oracle agreement band, in standard errors.
const ORACLE_SE: f64 = 3.0;

/// The four kinds of motion compared by the theorem suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `C = I`, no drift.
    Isotropic,
    /// `C = diag(4, 1, …, 1)`, no drift.
    Anisotropic,
    /// `C = 4 (1 + s) I` with `s = ½ + ξ₁/√2`; on the interval this is
    /// `D(x) = 1 + x`.
    Inhomogeneous,
    /// `C = 4 I`, `ν = √2 e₁`; on the interval `ν/D = 1`.
    Drifted,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Isotropic,
        Regime::Anisotropic,
        Regime::Inhomogeneous,
        Regime::Drifted,
    ];

    pub fn spec(self, n: usize, tau: f64) -> Result<DiffusionSpec> {
        if n < 2 {
            return Err(Error::InvalidDimension(n));
        }
        let m = n - 1;
        let chart = Arc::new(SimplexChart::new(n)?);
        match self {
            Regime::Isotropic => DiffusionSpec::isotropic(n, 1.0, tau),
            Regime::Anisotropic => {
                let mut c = DMatrix::identity(m, m);
                c[(0, 0)] = 4.0;
                DiffusionSpec::constant(chart, c, vec![0.0; m], tau)
            }
            Regime::Inhomogeneous if n == 2 => {
                DiffusionSpec::unit_interval(Profile1D::linear(1.0).diffusion_fn(), 0.0, tau)
            }
            Regime::Inhomogeneous => {
                let scale: ScalarFn =
                    Arc::new(|xi: &[f64]| 1.5 + xi[0] * std::f64::consts::FRAC_1_SQRT_2);
                DiffusionSpec::new(
                    chart,
                    Arc::new(ScaledCorrelation::new(DMatrix::identity(m, m) * 4.0, scale)),
                    Arc::new(ConstantDrift::zero(m)),
                    tau,
                )
            }
            Regime::Drifted if n == 2 => {
                DiffusionSpec::unit_interval(Profile1D::constant(1.0).diffusion_fn(), 1.0, tau)
            }
            Regime::Drifted => {
                let mut nu = vec![0.0; m];
                nu[0] = std::f64::consts::SQRT_2;
                DiffusionSpec::constant(chart, DMatrix::identity(m, m) * 4.0, nu, tau)
            }
        }
    }

    /// Whether absorption is predicted to follow the start vector.
    /// Every one-dimensional correlation is isotropic, so the anisotropic
    /// regime only departs from the prediction for `n ≥ 3`.
    pub fn expectation(self, n: usize) -> Expectation {
        match self {
            Regime::Isotropic => Expectation::MatchesStart,
            Regime::Anisotropic if n == 2 => Expectation::MatchesStart,
            _ => Expectation::RejectsStart,
        }
    }

    /// Interval oracle for the probability of absorption at vertex 0 from
    /// `p_0 = alpha`; defined for `n = 2`.
    pub fn oracle(self, alpha: f64) -> Result<f64> {
        match self {
            Regime::Isotropic | Regime::Anisotropic => Ok(alpha),
            Regime::Inhomogeneous => hitting_probability_ode(&Profile1D::linear(1.0), alpha),
            Regime::Drifted => biased_closed_form(1.0, 1.0, alpha),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Isotropic => "isotropic",
            Regime::Anisotropic => "anisotropic",
            Regime::Inhomogeneous => "inhomogeneous",
            Regime::Drifted => "drifted",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    MatchesStart,
    RejectsStart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowOutcome {
    AsExpected,
    Unexpected,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleCheck {
    pub value: f64,
    pub frequency: f64,
    pub standard_error: f64,
    pub within_band: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteRow {
    pub n: usize,
    pub start: Vec<f64>,
    pub regime: Regime,
    pub expectation: Expectation,
    pub verdict: Verdict,
    pub oracle: Option<OracleCheck>,
    pub outcome: RowOutcome,
    pub estimate: AbsorptionEstimate,
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub n_values: Vec<usize>,
    /// Start vectors; each is used for the `n` equal to its length. Values of
    /// `n` without a start use [`default_start`].
    pub starts: Vec<Vec<f64>>,
    pub trajectories: u64,
    pub master_seed: u64,
    pub workers: usize,
    pub tau: f64,
    pub max_steps: u64,
    /// Also compare each row at `dt/2`.
    pub check_dt_convergence: bool,
}

impl SuiteConfig {
    pub fn new(n_values: Vec<usize>, trajectories: u64, master_seed: u64) -> Self {
        Self {
            n_values,
            starts: Vec::new(),
            trajectories,
            master_seed,
            workers: 0,
            tau: 1.0,
            max_steps: super::DEFAULT_MAX_STEPS,
            check_dt_convergence: false,
        }
    }

    /// The `(n, start)` pairs the suite will run, in order.
    pub fn cases(&self) -> Result<Vec<(usize, SimplexPoint)>> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            if n < 2 {
                return Err(Error::InvalidDimension(n));
            }
            let mut found = false;
            for s in self.starts.iter().filter(|s| s.len() == n) {
                out.push((n, SimplexPoint::new(s.clone())?));
                found = true;
            }
            if !found {
                out.push((n, default_start(n)?));
            }
        }
        Ok(out)
    }
}

/// `p_k ∝ n − k`: interior and asymmetric, so every vertex has its own
/// predicted probability.
pub fn default_start(n: usize) -> Result<SimplexPoint> {
    let total = (n * (n + 1) / 2) as f64;
    SimplexPoint::new((0..n).map(|k| (n - k) as f64 / total).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    pub fn all_as_expected(&self) -> bool {
        self.rows.iter().all(|r| r.outcome == RowOutcome::AsExpected)
    }

    pub fn any_unexpected(&self) -> bool {
        self.rows.iter().any(|r| r.outcome == RowOutcome::Unexpected)
    }

    /// Plain-text pass/fail matrix: one line per `(n, start)`, one column
    /// per regime.
    pub fn matrix(&self) -> String {
        let mut out = String::from("n  start                         ");
        for r in Regime::ALL {
            out.push_str(&format!("{:<26}", r.to_string()));
        }
        out.push('\n');
        let mut i = 0;
        while i < self.rows.len() {
            let head = &self.rows[i];
            let start = head
                .start
                .iter()
                .map(|p| format!("{p:.3}"))
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!("{:<3}{:<30}", head.n, start));
            while i < self.rows.len() && self.rows[i].n == head.n && self.rows[i].start == head.start {
                let r = &self.rows[i];
                let p = r.estimate.chi_square.as_ref().map_or(f64::NAN, |c| c.p_value);
                let tag = match r.outcome {
                    RowOutcome::AsExpected => "ok",
                    RowOutcome::Unexpected => "FAIL",
                    RowOutcome::Inconclusive => "??",
                };
                out.push_str(&format!("{:<26}", format!("{tag} {:?} p={p:.2e}", r.verdict)));
                i += 1;
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every regime at every `(n, start)` case and compares the absorption
/// frequencies with the start vector (and, for `n = 2`, with the interval
/// oracles).
pub fn theorem_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    let mut rows = Vec::new();
    for (n, start) in config.cases()? {
        for regime in Regime::ALL {
            let spec = regime.spec(n, config.tau)?;
            let mut ens = EnsembleConfig::new(spec, start.clone(), config.trajectories, config.master_seed)?
                .expecting_start();
            ens.workers = config.workers;
            ens.max_steps = config.max_steps;
            ens.check_dt_convergence = config.check_dt_convergence;
            let estimate = run_ensemble(&ens)?;
            let verdict = estimate.verdict().expect("prediction was supplied");
            let expectation = regime.expectation(n);
            let oracle = if n == 2 {
                let value = regime.oracle(start.coords()[0])?;
                let frequency = estimate.frequencies[0];
                let se = standard_error(value, config.trajectories);
                Some(OracleCheck {
                    value,
                    frequency,
                    standard_error: se,
                    within_band: (frequency - value).abs() <= ORACLE_SE * se,
                })
            } else {
                None
            };
            let statistical = match (expectation, verdict) {
                (_, Verdict::Inconclusive) => RowOutcome::Inconclusive,
                (Expectation::MatchesStart, Verdict::Pass) | (Expectation::RejectsStart, Verdict::Reject) => {
                    RowOutcome::AsExpected
                }
                _ => RowOutcome::Unexpected,
            };
            let outcome = match &oracle {
                Some(o) if !o.within_band => RowOutcome::Unexpected,
                _ => statistical,
            };
            rows.push(SuiteRow {
                n,
                start: start.coords().to_vec(),
                regime,
                expectation,
                verdict,
                oracle,
                outcome,
                estimate,
            });
        }
    }
    Ok(SuiteReport { rows })
}

#[derive(Clone, Debug)]
pub struct ScalingConfig {
    pub n_values: Vec<usize>,
    pub trajectories: u64,
    pub master_seed: u64,
    pub workers: usize,
    pub tau: f64,
    pub sigma2: f64,
    pub max_steps: u64,
}

impl ScalingConfig {
    pub fn new(n_values: Vec<usize>, trajectories: u64, master_seed: u64) -> Self {
        Self {
            n_values,
            trajectories,
            master_seed,
            workers: 0,
            tau: 1.0,
            sigma2: 1.0,
            max_steps: super::DEFAULT_MAX_STEPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: usize,
    /// Mean time to reach a vertex from the barycenter, in the unit of `τ`'s value.
    pub mean_time: f64,
    pub standard_error: f64,
    /// `T(n) / (n τ)`.
    pub ratio: f64,
    pub estimate: AbsorptionEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub tau: f64,
    pub rows: Vec<ScalingRow>,
    pub strictly_increasing: bool,
}

/// Mean total reduction time from the barycenter of each simplex under
/// isotropic homogeneous motion with a common `τ`.
pub fn hitting_time_scaling(config: &ScalingConfig) -> Result<ScalingReport> {
    let mut rows = Vec::new();
    for &n in &config.n_values {
        let spec = DiffusionSpec::isotropic(n, config.sigma2, config.tau)?;
        let start = SimplexPoint::barycenter(n)?;
        let mut ens = EnsembleConfig::new(spec, start, config.trajectories, config.master_seed)?;
        ens.workers = config.workers;
        ens.max_steps = config.max_steps;
        ens.expected = Some(Expected {
            probabilities: vec![1.0 / n as f64; n],
            provenance: Provenance::Theorem,
        });
        let estimate = run_ensemble(&ens)?;
        let mean_time = estimate.mean_hitting_time * config.tau;
        let se = estimate.std_hitting_time * config.tau / (config.trajectories as f64).sqrt();
        rows.push(ScalingRow {
            n,
            mean_time,
            standard_error: se,
            ratio: mean_time / (n as f64 * config.tau),
            estimate,
        });
    }
    let strictly_increasing = rows.windows(2).all(|w| w[1].mean_time > w[0].mean_time);
    Ok(ScalingReport {
        tau: config.tau,
        rows,
        strictly_increasing,
    })
}

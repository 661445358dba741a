//! Ensembles of independent walks and the statistics drawn from them.
//!
//! Trajectory `i` always uses the random stream `(master_seed, i)`, and
//! aggregation happens over integer counts and step totals in index order,
//! so results are bit-identical for any number of worker threads.

mod stats;
mod suite;

pub use stats::{
    chi_square_test, homogeneity_test, normal_quantile, standard_error, wilson_interval,
    ChiSquare, Verdict, MIN_EXPECTED_COUNT, PASS_P_VALUE, REJECT_P_VALUE,
};
pub use suite::{
    hitting_time_scaling, theorem_suite, Expectation, OracleCheck, Regime, RowOutcome,
    ScalingConfig, ScalingReport, ScalingRow, SuiteConfig, SuiteReport, SuiteRow,
};

use rayon::prelude::*;
use serde::Serialize;

use crate::diffusion::{run_trajectory_with, DiffusionSpec, RunOptions, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::quantum::{run_reduction_episode, DensityMatrix, ReductionState};
use crate::rng::trajectory_stream;
use crate::simplex::SimplexPoint;

pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;
/// Combined standard errors allowed between the estimates at `dt` and `dt/2`.
pub const DT_CONVERGENCE_SE: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Theorem,
    Oracle,
    None,
}

/// Predicted absorption probabilities and where they come from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Expected {
    pub probabilities: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub spec: DiffusionSpec,
    pub start: SimplexPoint,
    pub trajectories: u64,
    pub dt: f64,
    pub master_seed: u64,
    pub max_steps: u64,
    pub expected: Option<Expected>,
    /// Worker threads; 0 uses all available cores. Never affects results.
    pub workers: usize,
    /// Also run at `dt/2` with the same seed and compare.
    pub check_dt_convergence: bool,
    pub run_options: RunOptions,
}

impl EnsembleConfig {
    /// Configuration with the default step size and no prediction.
    pub fn new(spec: DiffusionSpec, start: SimplexPoint, trajectories: u64, master_seed: u64) -> Result<Self> {
        let dt = spec.default_dt()?;
        Ok(Self {
            spec,
            start,
            trajectories,
            dt,
            master_seed,
            max_steps: DEFAULT_MAX_STEPS,
            expected: None,
            workers: 0,
            check_dt_convergence: false,
            run_options: RunOptions::default(),
        })
    }

    /// Predicts absorption at vertex `k` with probability `p_k(0)`.
    pub fn expecting_start(mut self) -> Self {
        self.expected = Some(Expected {
            probabilities: self.start.coords().to_vec(),
            provenance: Provenance::Theorem,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 {
            return Err(Error::Config("at least one trajectory is required".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.start.dim() != self.spec.n() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.n(),
                found: self.start.dim(),
            });
        }
        if let Some(e) = &self.expected {
            if e.probabilities.len() != self.spec.n() {
                return Err(Error::DimensionMismatch {
                    expected: self.spec.n(),
                    found: e.probabilities.len(),
                });
            }
            let s: f64 = e.probabilities.iter().sum();
            if (s - 1.0).abs() > 1e-9 || e.probabilities.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::Config(format!(
                    "expected probabilities must be non-negative and sum to 1, got sum {s}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DtConvergence {
    pub dt_half: f64,
    pub frequencies_half: Vec<f64>,
    /// Largest `|f(dt) − f(dt/2)|` in units of the combined standard error.
    pub max_difference_se: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbsorptionEstimate {
    pub trajectories: u64,
    pub dt: f64,
    pub master_seed: u64,
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
    pub wilson_ci_95: Vec<(f64, f64)>,
    pub expected: Option<Expected>,
    pub chi_square: Option<ChiSquare>,
    /// Mean hitting time in units of `τ`.
    pub mean_hitting_time: f64,
    /// Sample standard deviation of the hitting time, in units of `τ`.
    pub std_hitting_time: f64,
    pub total_steps: u64,
    pub shortcuts: u64,
    pub dt_convergence: Option<DtConvergence>,
}

impl AbsorptionEstimate {
    /// Standard error of each frequency.
    pub fn standard_errors(&self) -> Vec<f64> {
        self.frequencies
            .iter()
            .map(|f| standard_error(*f, self.trajectories))
            .collect()
    }

    pub fn verdict(&self) -> Option<Verdict> {
        self.chi_square.as_ref().map(|c| c.verdict())
    }
}

fn pool_for(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs `task(i)` for `i in 0..count` in parallel and returns the results
/// in index order, or the error of the lowest failing index together with
/// the number of successes before it.
fn indexed_map<T: Send>(
    count: u64,
    workers: usize,
    task: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = pool_for(workers)?.install(|| (0..count).into_par_iter().map(&task).collect());
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                return Err(Error::Ensemble {
                    index: i as u64,
                    completed: out.len() as u64,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

/// Runs the trajectories of `config` and returns their records in index order.
pub fn run_records(config: &EnsembleConfig) -> Result<Vec<TrajectoryRecord>> {
    config.validate()?;
    indexed_map(config.trajectories, config.workers, |i| {
        let mut rng = trajectory_stream(config.master_seed, i);
        run_trajectory_with(&config.spec, &config.start, config.dt, &mut rng, config.max_steps, config.run_options)
    })
}

fn aggregate(config: &EnsembleConfig, records: &[TrajectoryRecord]) -> Result<AbsorptionEstimate> {
    let n = config.spec.n();
    let m = records.len() as u64;
    let mut counts = vec![0u64; n];
    let (mut s1, mut s2) = (0u128, 0u128);
    let mut shortcuts = 0;
    for r in records {
        let k = r
            .absorbed_vertex
            .ok_or_else(|| Error::Degenerate("record without absorbed vertex".into()))?;
        counts[k] += 1;
        s1 += r.steps_taken as u128;
        s2 += (r.steps_taken as u128) * (r.steps_taken as u128);
        shortcuts += r.shortcut as u64;
    }
    let frequencies: Vec<f64> = counts.iter().map(|c| *c as f64 / m as f64).collect();
    let wilson_ci_95 = counts.iter().map(|c| wilson_interval(*c, m, 0.95)).collect();
    let unit = config.dt / config.spec.tau();
    let mean_steps = s1 as f64 / m as f64;
    let var_steps = if m > 1 {
        // Exact integer numerator of the sample variance.
        let num = s2 * m as u128 - s1 * s1;
        num as f64 / (m as f64 * (m - 1) as f64)
    } else {
        0.0
    };
    let chi_square = match &config.expected {
        Some(e) => Some(chi_square_test(&counts, &e.probabilities)?),
        None => None,
    };
    Ok(AbsorptionEstimate {
        trajectories: m,
        dt: config.dt,
        master_seed: config.master_seed,
        counts,
        frequencies,
        wilson_ci_95,
        expected: config.expected.clone(),
        chi_square,
        mean_hitting_time: mean_steps * unit,
        std_hitting_time: var_steps.sqrt() * unit,
        total_steps: s1 as u64,
        shortcuts,
        dt_convergence: None,
    })
}

/// Runs the ensemble described by `config` and computes its statistics.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<AbsorptionEstimate> {
    let records = run_records(config)?;
    let mut estimate = aggregate(config, &records)?;
    if config.check_dt_convergence {
        let mut half = config.clone();
        half.dt = config.dt / 2.0;
        half.max_steps = config.max_steps.saturating_mul(2);
        half.check_dt_convergence = false;
        let fine = aggregate(&half, &run_records(&half)?)?;
        let m = config.trajectories;
        let worst = estimate
            .frequencies
            .iter()
            .zip(&fine.frequencies)
            .map(|(a, b)| {
                let se = (standard_error(*a, m).powi(2) + standard_error(*b, m).powi(2)).sqrt();
                if se == 0.0 {
                    if a == b { 0.0 } else { f64::INFINITY }
                } else {
                    (a - b).abs() / se
                }
            })
            .fold(0.0f64, f64::max);
        estimate.dt_convergence = Some(DtConvergence {
            dt_half: half.dt,
            frequencies_half: fine.frequencies,
            max_difference_se: worst,
            passed: worst < DT_CONVERGENCE_SE,
        });
    }
    Ok(estimate)
}

/// One quantum reduction episode: the walk record and the collapsed state.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub record: TrajectoryRecord,
    pub collapsed: DensityMatrix,
}

/// Runs `episodes` reduction episodes from the same decohered state, with
/// episode `i` on stream `(master_seed, i)`.
pub fn run_episodes(
    state: &ReductionState,
    spec: &DiffusionSpec,
    dt: f64,
    master_seed: u64,
    episodes: u64,
    max_steps: u64,
    workers: usize,
) -> Result<Vec<EpisodeOutcome>> {
    indexed_map(episodes, workers, |i| {
        let mut rng = trajectory_stream(master_seed, i);
        let (record, collapsed) = run_reduction_episode(state, spec, dt, &mut rng, max_steps)?;
        Ok(EpisodeOutcome { record, collapsed })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_start_is_certain() {
        let spec = DiffusionSpec::isotropic(3, 1.0, 1.0).unwrap();
        let start = SimplexPoint::vertex(3, 2).unwrap();
        let est = run_ensemble(&EnsembleConfig::new(spec, start, 50, 1).unwrap().expecting_start()).unwrap();
        assert_eq!(est.counts, vec![0, 0, 50]);
        assert_eq!(est.mean_hitting_time, 0.0);
        assert_eq!(est.chi_square.unwrap().p_value, 1.0);
    }

    #[test]
    fn invalid_configurations() {
        let spec = DiffusionSpec::isotropic(2, 1.0, 1.0).unwrap();
        let start = SimplexPoint::barycenter(2).unwrap();
        let mut cfg = EnsembleConfig::new(spec, start, 10, 1).unwrap();
        cfg.trajectories = 0;
        assert!(run_ensemble(&cfg).is_err());
        cfg.trajectories = 10;
        cfg.expected = Some(Expected {
            probabilities: vec![0.5, 0.6],
            provenance: Provenance::Oracle,
        });
        assert!(matches!(run_ensemble(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn failing_trajectory_is_named() {
        let spec = DiffusionSpec::isotropic(2, 1.0, 1.0).unwrap();
        let start = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        let mut cfg = EnsembleConfig::new(spec, start, 20, 3).unwrap();
        cfg.max_steps = 5;
        match run_ensemble(&cfg) {
            Err(Error::Ensemble { index, completed, source }) => {
                assert_eq!(index, completed);
                assert!(matches!(*source, Error::NonTermination { max_steps: 5, .. }));
            }
            other => panic!("expected an ensemble error, got {other:?}"),
        }
    }

    #[test]
    fn workers_do_not_change_results() {
        let spec = DiffusionSpec::isotropic(3, 1.0, 1.0).unwrap();
        let start = SimplexPoint::new(vec![0.5, 0.3, 0.2]).unwrap();
        let mut cfg = EnsembleConfig::new(spec, start, 300, 11).unwrap().expecting_start();
        cfg.workers = 1;
        let a = run_ensemble(&cfg).unwrap();
        cfg.workers = 3;
        let b = run_ensemble(&cfg).unwrap();
        assert_eq!(a, b);
    }
}

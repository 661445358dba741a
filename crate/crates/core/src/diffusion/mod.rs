//! The stochastic reduction process: Brownian motion of a probability vector
//! with absorbing faces.
//!
//! The motion is defined by its Fokker–Planck equation in flux form,
//! `∂ρ/∂t = ∇·(½C∇ρ − νρ) / τ`, in chart coordinates. The Itô drift of the
//! sampled increments is therefore `ν + ½∇·C`; for homogeneous motion the
//! correction vanishes and `ν` is the mean velocity of `ξ`.

mod engine;
pub mod field;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::simplex::{SimplexChart, SimplexPoint};

pub use engine::{
    run_trajectory, run_trajectory_with, sample_step, CrossingRule, DescentEvent, RunOptions, StepOutcome,
    TrajectoryRecord, Walker,
};
pub use field::{
    ConstantCorrelation, ConstantDrift, CorrelationField, DriftField, FnCorrelation, FnDrift,
    ScaledCorrelation, ScalarFn, TransportedCorrelation, TransportedDrift,
};

/// Per-step displacement bound for the default time step, as a fraction of
/// the simplex edge length.
pub const DEFAULT_STEP_FRACTION: f64 = 0.01;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const ISOTROPY_TOL: f64 = 1e-9;
const HOMOGENEITY_TOL: f64 = 1e-9;
const DRIFT_TOL: f64 = 1e-12;

/// Regime flags of the theorem: zero drift, `C ∝ I`, `C` independent of `ξ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RegimeTags {
    pub non_directional: bool,
    pub isotropic: bool,
    pub homogeneous: bool,
}

impl RegimeTags {
    pub fn all(&self) -> bool {
        self.non_directional && self.isotropic && self.homogeneous
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeReport {
    pub tags: RegimeTags,
    /// Largest drift norm over the probes.
    pub max_drift: f64,
    /// Largest relative eigenvalue spread `(λmax − λmin) / λmax`.
    pub max_eigen_spread: f64,
    /// Largest entrywise deviation of `C` from its value at the first probe,
    /// relative to that value's largest entry.
    pub max_variation: f64,
}

/// Full description of the random motion on the simplex.
#[derive(Clone)]
pub struct DiffusionSpec {
    chart: Arc<SimplexChart>,
    correlation: Arc<dyn CorrelationField>,
    drift: Arc<dyn DriftField>,
    tau: f64,
    tags: RegimeTags,
    /// `Bᵀ L` (row-major, `n × (n−1)`) for constant `C = L Lᵀ`.
    constant_lift: Option<Vec<f64>>,
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("n", &self.n())
            .field("correlation", &self.correlation)
            .field("drift", &self.drift)
            .field("tau", &self.tau)
            .field("tags", &self.tags)
            .finish()
    }
}

impl DiffusionSpec {
    pub fn new(
        chart: Arc<SimplexChart>,
        correlation: Arc<dyn CorrelationField>,
        drift: Arc<dyn DriftField>,
        tau: f64,
    ) -> Result<Self> {
        let m = chart.n() - 1;
        if correlation.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: correlation.dim(),
            });
        }
        if drift.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: drift.dim(),
            });
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Spec(format!("time scale must be positive, got {tau}")));
        }
        let mut spec = Self {
            chart,
            correlation,
            drift,
            tau,
            tags: RegimeTags::default(),
            constant_lift: None,
        };
        let probes = default_probes(spec.n());
        let mut c = DMatrix::zeros(m, m);
        for probe in &probes {
            let xi = spec.chart.to_cartesian(probe)?;
            spec.correlation.eval(&xi, &mut c);
            check_correlation(&c)?;
        }
        if spec.correlation.is_constant() {
            spec.correlation.eval(&vec![0.0; m], &mut c);
            let mut factor = DMatrix::zeros(m, m);
            psd_factor(&c, &mut factor)?;
            let lift = spec.chart.basis().transpose() * factor;
            spec.constant_lift = Some(row_major(&lift));
        }
        spec.tags = classify_spec(&spec, &probes).tags;
        Ok(spec)
    }

    /// `C = σ² I`, no drift.
    pub fn isotropic(n: usize, sigma2: f64, tau: f64) -> Result<Self> {
        let chart = Arc::new(SimplexChart::new(n)?);
        Self::constant(chart, DMatrix::identity(n - 1, n - 1) * sigma2, vec![0.0; n - 1], tau)
    }

    /// Homogeneous motion with constant `C` and `ν` in the given chart.
    pub fn constant(
        chart: Arc<SimplexChart>,
        correlation: DMatrix<f64>,
        drift: Vec<f64>,
        tau: f64,
    ) -> Result<Self> {
        Self::new(
            chart,
            Arc::new(ConstantCorrelation(correlation)),
            Arc::new(ConstantDrift(drift)),
            tau,
        )
    }

    /// Two-state motion described on the unit interval `x = p_0 ∈ [0, 1]`:
    /// `⟨dx²⟩ = 2 D(x) dt/τ`, flux-form drift `ν` in `x` units.
    ///
    /// The default chart has `ξ = (2x − 1)/√2`, so `C(ξ) = 4 D(x)` and the
    /// chart drift is `√2 ν`.
    pub fn unit_interval(diffusion: ScalarFn, nu: f64, tau: f64) -> Result<Self> {
        let chart = Arc::new(SimplexChart::new(2)?);
        let sign = chart.basis()[(0, 0)].signum();
        let scale: ScalarFn = Arc::new(move |xi: &[f64]| {
            let x = 0.5 + sign * xi[0] * std::f64::consts::FRAC_1_SQRT_2;
            4.0 * diffusion(&[x])
        });
        let correlation: Arc<dyn CorrelationField> =
            Arc::new(ScaledCorrelation::new(DMatrix::identity(1, 1), scale));
        let drift = Arc::new(ConstantDrift(vec![sign * std::f64::consts::SQRT_2 * nu]));
        Self::new(chart, correlation, drift, tau)
    }

    /// The same physical motion expressed in another chart of the simplex.
    pub fn in_chart(&self, chart: Arc<SimplexChart>) -> Result<Self> {
        let r = self.chart.transition_to(&chart)?;
        Self::new(
            chart,
            Arc::new(TransportedCorrelation::new(self.correlation.clone(), r.clone())),
            Arc::new(TransportedDrift::new(self.drift.clone(), r)),
            self.tau,
        )
    }

    /// Same motion on a time scale `tau`.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.chart.clone(), self.correlation.clone(), self.drift.clone(), tau)
    }

    pub fn n(&self) -> usize {
        self.chart.n()
    }

    pub fn chart(&self) -> &SimplexChart {
        &self.chart
    }

    pub fn chart_arc(&self) -> Arc<SimplexChart> {
        self.chart.clone()
    }

    pub fn correlation(&self) -> &dyn CorrelationField {
        self.correlation.as_ref()
    }

    pub fn drift(&self) -> &dyn DriftField {
        self.drift.as_ref()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Regime flags derived from the fields at the default probe points.
    pub fn tags(&self) -> RegimeTags {
        self.tags
    }

    pub(crate) fn constant_lift(&self) -> Option<&[f64]> {
        self.constant_lift.as_deref()
    }

    /// Largest eigenvalue of `C` over the default probes.
    pub fn max_rate(&self) -> Result<f64> {
        let m = self.n() - 1;
        let mut c = DMatrix::zeros(m, m);
        let mut best: f64 = 0.0;
        for probe in default_probes(self.n()) {
            let xi = self.chart.to_cartesian(&probe)?;
            self.correlation.eval(&xi, &mut c);
            let eig = SymmetricEigen::new(c.clone());
            best = best.max(eig.eigenvalues.max());
        }
        Ok(best)
    }

    /// Step such that the per-step displacement `√(λmax dt/τ)` is
    /// `DEFAULT_STEP_FRACTION` of the edge length `√2`.
    pub fn default_dt(&self) -> Result<f64> {
        self.dt_for_fraction(DEFAULT_STEP_FRACTION)
    }

    pub fn dt_for_fraction(&self, fraction: f64) -> Result<f64> {
        let rate = self.max_rate()?;
        if rate <= 0.0 {
            return Err(Error::Spec("correlation vanishes at every probe".into()));
        }
        let step = fraction * std::f64::consts::SQRT_2;
        Ok(step * step * self.tau / rate)
    }
}

/// Interior probe points: barycenter, points between the barycenter and
/// each vertex, and (for modest `n`) near each edge midpoint.
pub fn default_probes(n: usize) -> Vec<SimplexPoint> {
    let bary = 1.0 / n as f64;
    let mut out = vec![SimplexPoint::from_parts(vec![bary; n], vec![false; n])];
    for k in 0..n {
        let mut p = vec![0.5 * bary; n];
        p[k] += 0.5;
        out.push(SimplexPoint::from_parts(p, vec![false; n]));
    }
    if n <= 10 {
        for i in 0..n {
            for j in i + 1..n {
                let mut p = vec![0.2 * bary; n];
                p[i] += 0.4;
                p[j] += 0.4;
                out.push(SimplexPoint::from_parts(p, vec![false; n]));
            }
        }
    }
    out
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn check_correlation(c: &DMatrix<f64>) -> Result<()> {
    let asym = (c - c.transpose()).abs().max();
    if asym > SYMMETRY_TOL * c.abs().max().max(1.0) {
        return Err(Error::Spec(format!("correlation matrix not symmetric ({asym:e})")));
    }
    let eig = SymmetricEigen::new(c.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL {
        return Err(Error::Spec(format!(
            "correlation matrix has negative eigenvalue {min:e}"
        )));
    }
    Ok(())
}

/// Writes a factor `L` with `L Lᵀ = C`. Cholesky first; semidefinite
/// matrices fall back to the symmetric square root.
pub(crate) fn psd_factor(c: &DMatrix<f64>, out: &mut DMatrix<f64>) -> Result<()> {
    let m = c.nrows();
    if m == 1 {
        let v = c[(0, 0)];
        if v < -PSD_TOL {
            return Err(Error::Spec(format!("negative variance {v:e}")));
        }
        out[(0, 0)] = v.max(0.0).sqrt();
        return Ok(());
    }
    let scale = c.diagonal().max().max(f64::MIN_POSITIVE);
    out.fill(0.0);
    let mut ok = true;
    'chol: for j in 0..m {
        let mut d = c[(j, j)];
        for k in 0..j {
            d -= out[(j, k)] * out[(j, k)];
        }
        if d <= 1e-14 * scale {
            ok = false;
            break 'chol;
        }
        let d = d.sqrt();
        out[(j, j)] = d;
        for i in j + 1..m {
            let mut s = c[(i, j)];
            for k in 0..j {
                s -= out[(i, k)] * out[(j, k)];
            }
            out[(i, j)] = s / d;
        }
    }
    if ok {
        return Ok(());
    }
    let eig = SymmetricEigen::new(c.clone());
    if let Some(min) = eig.eigenvalues.iter().copied().reduce(f64::min) {
        if min < -PSD_TOL {
            return Err(Error::Spec(format!(
                "correlation matrix has negative eigenvalue {min:e}"
            )));
        }
    }
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt();
        }
    }
    Ok(())
}

/// Reports which of the theorem's three conditions hold at the probes.
pub fn classify_spec(spec: &DiffusionSpec, probes: &[SimplexPoint]) -> RegimeReport {
    let m = spec.n() - 1;
    let mut c = DMatrix::zeros(m, m);
    let mut nu = vec![0.0; m];
    let mut first: Option<DMatrix<f64>> = None;
    let mut max_drift: f64 = 0.0;
    let mut max_spread: f64 = 0.0;
    let mut max_variation: f64 = 0.0;
    for probe in probes {
        let Ok(xi) = spec.chart.to_cartesian(probe) else {
            continue;
        };
        spec.correlation.eval(&xi, &mut c);
        spec.drift.eval(&xi, &mut nu);
        max_drift = max_drift.max(nu.iter().map(|x| x * x).sum::<f64>().sqrt());
        let eig = SymmetricEigen::new(c.clone());
        let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        if hi > 0.0 {
            max_spread = max_spread.max((hi - lo) / hi);
        }
        match &first {
            None => first = Some(c.clone()),
            Some(c0) => {
                let reference = c0.abs().max().max(f64::MIN_POSITIVE);
                max_variation = max_variation.max((&c - c0).abs().max() / reference);
            }
        }
    }
    RegimeReport {
        tags: RegimeTags {
            non_directional: max_drift <= DRIFT_TOL,
            isotropic: max_spread < ISOTROPY_TOL,
            homogeneous: max_variation <= HOMOGENEITY_TOL,
        },
        max_drift,
        max_eigen_spread: max_spread,
        max_variation,
    }
}

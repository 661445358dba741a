use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{psd_factor, DiffusionSpec};
use crate::error::{Error, Result};
use crate::simplex::{SimplexPoint, ALGEBRAIC_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DescentEvent {
    pub time: f64,
    pub index: usize,
}

/// One reduction episode of the walk.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    /// `None` only on a partial record from an interrupted run.
    pub absorbed_vertex: Option<usize>,
    /// Elapsed time, in the same unit as `τ` and `dt`.
    pub hitting_time: f64,
    pub descent_events: Vec<DescentEvent>,
    pub steps_taken: u64,
    /// Set when the run ended through the near-vertex shortcut.
    pub shortcut: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub new_point: SimplexPoint,
    /// Realized increment `new − old`; sums to zero.
    pub dp: Vec<f64>,
    /// Face crossed during this step, if any (the most negative coordinate).
    pub crossed: Option<usize>,
}

/// How a step that may have touched a face is detected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossingRule {
    /// Only coordinates that end the step at or below zero cross.
    Endpoint,
    /// Additionally, a coordinate that stays positive at both ends crosses
    /// with the Brownian-bridge probability `exp(−2ab/v)` of having touched
    /// zero during the step (`a`, `b` its values, `v` its step variance).
    #[default]
    Bridge,
}

/// Bridge exponents above this are treated as no crossing (`e^{−50}`).
const BRIDGE_CUTOFF: f64 = 50.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Stop as soon as some coordinate exceeds `1 − eps`.
    pub vertex_shortcut: Option<f64>,
    pub crossing: CrossingRule,
}

/// Euler–Maruyama walker confined to the active face of the simplex.
///
/// Each step draws `dξ ~ N((ν + ½∇·C) dt/τ, C dt/τ)` in the chart, maps it
/// to `dp`, and projects it orthogonally onto the active face (frozen
/// coordinates receive exactly zero, the active increments sum to zero).
/// If active coordinates reach zero or below, the most negative is frozen
/// and the survivors rescaled; this repeats until none is left negative.
/// Under [`CrossingRule::Bridge`] a step that ends inside the face may still
/// freeze the coordinate most likely to have touched zero during the step.
pub struct Walker<'a> {
    spec: &'a DiffusionSpec,
    dt: f64,
    p: Vec<f64>,
    prev: Vec<f64>,
    frozen: Vec<bool>,
    active: usize,
    steps: u64,
    events: Vec<DescentEvent>,
    shortcut: bool,
    xi: Vec<f64>,
    dxi: Vec<f64>,
    z: Vec<f64>,
    drift: Vec<f64>,
    div: Vec<f64>,
    raw: Vec<f64>,
    /// `Bᵀ ν` when both fields are constant.
    constant_drift: Option<Vec<f64>>,
    c: DMatrix<f64>,
    factor: DMatrix<f64>,
    crossing: CrossingRule,
    /// Covariance of the lifted increment per unit `dt/τ`, row-major `n × n`.
    gram: Vec<f64>,
    row_sums: Vec<f64>,
}

impl<'a> Walker<'a> {
    pub fn new(spec: &'a DiffusionSpec, start: &SimplexPoint, dt: f64) -> Result<Self> {
        let n = spec.n();
        if start.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: start.dim(),
            });
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Spec(format!("time step must be positive, got {dt}")));
        }
        let m = n - 1;
        let constant_drift = if spec.correlation().is_constant() && spec.drift().is_constant() {
            let mut nu = vec![0.0; m];
            spec.drift().eval(&vec![0.0; m], &mut nu);
            let mut lifted = vec![0.0; n];
            spec.chart().lift_into(&nu, &mut lifted);
            Some(lifted)
        } else {
            None
        };
        Ok(Self {
            spec,
            dt,
            p: start.coords().to_vec(),
            prev: start.coords().to_vec(),
            frozen: start.frozen().to_vec(),
            active: start.active_count(),
            steps: 0,
            events: Vec::with_capacity(m),
            shortcut: false,
            xi: vec![0.0; m],
            dxi: vec![0.0; m],
            z: vec![0.0; m],
            drift: vec![0.0; m],
            div: vec![0.0; m],
            raw: vec![0.0; n],
            constant_drift,
            c: DMatrix::zeros(m, m),
            factor: DMatrix::zeros(m, m),
            crossing: CrossingRule::default(),
            gram: spec.constant_lift().map(|l| lift_gram(l, n)).unwrap_or_else(|| vec![0.0; n * n]),
            row_sums: vec![0.0; n],
        })
    }

    pub fn with_crossing(mut self, rule: CrossingRule) -> Self {
        self.crossing = rule;
        self
    }

    pub fn coords(&self) -> &[f64] {
        &self.p
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn point(&self) -> SimplexPoint {
        SimplexPoint::from_parts(self.p.clone(), self.frozen.clone())
    }

    /// Realized increment of the last step.
    pub fn increment(&self) -> Vec<f64> {
        self.p.iter().zip(&self.prev).map(|(a, b)| a - b).collect()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn elapsed(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn absorbed_vertex(&self) -> Option<usize> {
        if self.active == 1 {
            self.frozen.iter().position(|f| !f)
        } else {
            None
        }
    }

    pub fn events(&self) -> &[DescentEvent] {
        &self.events
    }

    /// Replaces the walker's position, keeping the same frozen set.
    pub fn resync(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.p.len() {
            return Err(Error::DimensionMismatch {
                expected: self.p.len(),
                found: p.len(),
            });
        }
        let sum: f64 = p.iter().sum();
        let bad_frozen = p.iter().zip(&self.frozen).any(|(x, f)| *f && *x != 0.0);
        if (sum - 1.0).abs() > ALGEBRAIC_TOL || p.iter().any(|x| *x < 0.0) || bad_frozen {
            return Err(Error::OutOfSimplex {
                reason: "resync point is not on the walker's face".into(),
                coords: p.to_vec(),
            });
        }
        self.p.copy_from_slice(p);
        Ok(())
    }

    /// Advances one step; returns the first face crossed, if any.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<usize>> {
        self.prev.copy_from_slice(&self.p);
        if self.active <= 1 {
            return Ok(None);
        }
        let spec = self.spec;
        let n = self.p.len();
        let m = n - 1;
        let h = self.dt / spec.tau();
        let sqrt_h = h.sqrt();

        for z in self.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }

        match (spec.constant_lift(), &self.constant_drift) {
            (Some(lift), Some(drift)) => {
                for (k, raw) in self.raw.iter_mut().enumerate() {
                    let row = &lift[k * m..(k + 1) * m];
                    let noise: f64 = row.iter().zip(&self.z).map(|(a, b)| a * b).sum();
                    *raw = noise * sqrt_h + drift[k] * h;
                }
            }
            _ => {
                spec.chart().project_into(&self.p, &mut self.xi);
                let constant = spec.correlation().is_constant();
                if !constant {
                    spec.correlation().eval(&self.xi, &mut self.c);
                    psd_factor(&self.c, &mut self.factor)?;
                }
                spec.drift().eval(&self.xi, &mut self.drift);
                if !constant {
                    spec.correlation().divergence(&self.xi, &mut self.div);
                    for (d, v) in self.drift.iter_mut().zip(&self.div) {
                        *d += 0.5 * v;
                    }
                }
                match spec.constant_lift() {
                    Some(lift) => {
                        for (k, raw) in self.raw.iter_mut().enumerate() {
                            let row = &lift[k * m..(k + 1) * m];
                            *raw = row.iter().zip(&self.z).map(|(a, b)| a * b).sum::<f64>() * sqrt_h;
                        }
                        for j in 0..m {
                            self.dxi[j] = self.drift[j] * h;
                        }
                    }
                    None => {
                        self.raw.iter_mut().for_each(|r| *r = 0.0);
                        for j in 0..m {
                            let mut noise = 0.0;
                            for k in 0..m {
                                noise += self.factor[(j, k)] * self.z[k];
                            }
                            self.dxi[j] = noise * sqrt_h + self.drift[j] * h;
                        }
                    }
                }
                let basis = spec.chart().basis();
                for (k, raw) in self.raw.iter_mut().enumerate() {
                    for j in 0..m {
                        *raw += basis[(j, k)] * self.dxi[j];
                    }
                }
            }
        }

        // Orthogonal projection onto the active face.
        let mut sum = 0.0;
        for (raw, f) in self.raw.iter().zip(&self.frozen) {
            if !f {
                sum += raw;
            }
        }
        let mean = sum / self.active as f64;
        let mut lowest = f64::INFINITY;
        for ((x, raw), f) in self.p.iter_mut().zip(&self.raw).zip(&self.frozen) {
            if !f {
                *x += raw - mean;
                lowest = lowest.min(*x);
            }
        }

        self.steps += 1;
        if lowest > 0.0 {
            if self.crossing == CrossingRule::Bridge {
                return Ok(self.bridge_crossing(rng, h));
            }
            return Ok(None);
        }
        Ok(self.resolve_crossings())
    }

    /// Bridge test for a step that ended with every active coordinate
    /// positive. One uniform is drawn per coordinate whose exponent is below
    /// the cutoff; of those that fire, the smallest is frozen.
    fn bridge_crossing<R: Rng + ?Sized>(&mut self, rng: &mut R, h: f64) -> Option<usize> {
        let n = self.p.len();
        if self.spec.constant_lift().is_none() {
            // C was evaluated at the start of this step.
            let basis = self.spec.chart().basis();
            let m = n - 1;
            for k in 0..n {
                for l in k..n {
                    let mut acc = 0.0;
                    for i in 0..m {
                        let bi = basis[(i, k)];
                        for j in 0..m {
                            acc += bi * self.c[(i, j)] * basis[(j, l)];
                        }
                    }
                    self.gram[k * n + l] = acc;
                    self.gram[l * n + k] = acc;
                }
            }
        }
        let a = self.active as f64;
        let mut total = 0.0;
        for k in 0..n {
            self.row_sums[k] = 0.0;
            if self.frozen[k] {
                continue;
            }
            for l in 0..n {
                if !self.frozen[l] {
                    self.row_sums[k] += self.gram[k * n + l];
                }
            }
            total += self.row_sums[k];
        }
        let mut hit: Option<(usize, f64)> = None;
        for k in 0..n {
            if self.frozen[k] {
                continue;
            }
            // Variance of the face-projected increment of coordinate k.
            let v = (self.gram[k * n + k] - 2.0 * self.row_sums[k] / a + total / (a * a)) * h;
            if v <= 0.0 {
                continue;
            }
            let e = 2.0 * self.prev[k] * self.p[k] / v;
            if e < BRIDGE_CUTOFF {
                let u: f64 = rng.random();
                if u < (-e).exp() && hit.is_none_or(|(_, b)| self.p[k] < b) {
                    hit = Some((k, self.p[k]));
                }
            }
        }
        let (k, _) = hit?;
        let time = self.elapsed();
        self.freeze(k, time);
        Some(k)
    }

    /// Sets coordinate `k` to zero and rescales the survivors to sum to one.
    fn freeze(&mut self, k: usize, time: f64) {
        let denom = 1.0 - self.p[k];
        self.p[k] = 0.0;
        self.frozen[k] = true;
        self.active -= 1;
        for (x, f) in self.p.iter_mut().zip(&self.frozen) {
            if !f {
                *x /= denom;
            }
        }
        self.events.push(DescentEvent { time, index: k });
        if self.active == 1 {
            if let Some(k) = self.frozen.iter().position(|f| !f) {
                self.p[k] = 1.0;
            }
        }
    }

    fn resolve_crossings(&mut self) -> Option<usize> {
        let mut first = None;
        let time = self.elapsed();
        loop {
            let mut worst: Option<(usize, f64)> = None;
            for (k, (&x, &f)) in self.p.iter().zip(&self.frozen).enumerate() {
                if !f && x <= 0.0 && worst.is_none_or(|(_, w)| x < w) {
                    worst = Some((k, x));
                }
            }
            let Some((k, _)) = worst else { break };
            self.freeze(k, time);
            first.get_or_insert(k);
        }
        first
    }

    fn take_shortcut(&mut self, eps: f64) -> bool {
        let Some((best, &max)) = self
            .p
            .iter()
            .enumerate()
            .filter(|(k, _)| !self.frozen[*k])
            .max_by(|a, b| a.1.total_cmp(b.1))
        else {
            return false;
        };
        if max <= 1.0 - eps || self.active <= 1 {
            return false;
        }
        let time = self.elapsed();
        let mut rest: Vec<usize> = (0..self.p.len())
            .filter(|&k| k != best && !self.frozen[k])
            .collect();
        rest.sort_by(|&a, &b| self.p[a].total_cmp(&self.p[b]).then(a.cmp(&b)));
        for k in rest {
            self.p[k] = 0.0;
            self.frozen[k] = true;
            self.events.push(DescentEvent { time, index: k });
        }
        self.p[best] = 1.0;
        self.active = 1;
        self.shortcut = true;
        true
    }

    pub fn record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            absorbed_vertex: self.absorbed_vertex(),
            hitting_time: self.elapsed(),
            descent_events: self.events.clone(),
            steps_taken: self.steps,
            shortcut: self.shortcut,
        }
    }

    pub fn into_record(self) -> TrajectoryRecord {
        TrajectoryRecord {
            absorbed_vertex: self.absorbed_vertex(),
            hitting_time: self.elapsed(),
            descent_events: self.events,
            steps_taken: self.steps,
            shortcut: self.shortcut,
        }
    }
}

/// `L Lᵀ` for a row-major `n × (n − 1)` lift `L`.
fn lift_gram(lift: &[f64], n: usize) -> Vec<f64> {
    let m = n - 1;
    let mut g = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            g[k * n + l] = (0..m).map(|j| lift[k * m + j] * lift[l * m + j]).sum();
        }
    }
    g
}

/// One step of the walk from `pt`.
pub fn sample_step<R: Rng + ?Sized>(
    spec: &DiffusionSpec,
    pt: &SimplexPoint,
    dt: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let mut walker = Walker::new(spec, pt, dt)?;
    let crossed = walker.step(rng)?;
    Ok(StepOutcome {
        dp: walker.increment(),
        new_point: walker.point(),
        crossed,
    })
}

/// Runs the walk from `start` until a vertex is reached.
pub fn run_trajectory<R: Rng + ?Sized>(
    spec: &DiffusionSpec,
    start: &SimplexPoint,
    dt: f64,
    rng: &mut R,
    max_steps: u64,
) -> Result<TrajectoryRecord> {
    run_trajectory_with(spec, start, dt, rng, max_steps, RunOptions::default())
}

pub fn run_trajectory_with<R: Rng + ?Sized>(
    spec: &DiffusionSpec,
    start: &SimplexPoint,
    dt: f64,
    rng: &mut R,
    max_steps: u64,
    options: RunOptions,
) -> Result<TrajectoryRecord> {
    let mut walker = Walker::new(spec, start, dt)?.with_crossing(options.crossing);
    while walker.absorbed_vertex().is_none() {
        if let Some(eps) = options.vertex_shortcut {
            if walker.take_shortcut(eps) {
                break;
            }
        }
        if walker.steps() >= max_steps {
            return Err(Error::NonTermination {
                max_steps,
                partial: Box::new(walker.into_record()),
            });
        }
        walker.step(rng)?;
    }
    Ok(walker.into_record())
}

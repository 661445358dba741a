use rand::Rng;

use super::{decohere, trace, trace_norm, CMatrix, DensityMatrix, ProjectorFamily, C64};
use crate::diffusion::{DiffusionSpec, TrajectoryRecord, Walker};
use crate::error::{Error, Result};
use crate::simplex::{SimplexPoint, ALGEBRAIC_TOL};

/// `Tr|ρ₁|` above which an episode refuses to start.
pub const DEFAULT_DECOHERENCE_THRESHOLD: f64 = 1e-6;

const PROBABILITY_TOL: f64 = 1e-10;
/// Block weights below this are rounding noise and are treated as zero.
const ZERO_WEIGHT: f64 = 1e-14;

/// Density matrix split along a projector family, with the block weights
/// `p_j = Tr(P_j ρ P_j)` as a point of the simplex.
#[derive(Clone, Debug)]
pub struct ReductionState {
    family: ProjectorFamily,
    components: Vec<CMatrix>,
    residual: CMatrix,
    probs: SimplexPoint,
}

impl ReductionState {
    pub fn new(rho: &DensityMatrix, family: ProjectorFamily) -> Result<Self> {
        if family.len() < 2 {
            return Err(Error::InvalidDimension(family.len()));
        }
        let split = decohere(rho, &family)?;
        let mut components: Vec<CMatrix> = (0..family.len())
            .map(|j| family.sandwich(j, rho.matrix()))
            .collect();
        for c in components.iter_mut() {
            if trace(c).re.abs() < ZERO_WEIGHT {
                c.fill(C64::new(0.0, 0.0));
            }
        }
        let probs = probabilities_of(&components)?;
        Ok(Self {
            family,
            components,
            residual: split.rho1,
            probs,
        })
    }

    pub fn family(&self) -> &ProjectorFamily {
        &self.family
    }

    pub fn components(&self) -> &[CMatrix] {
        &self.components
    }

    /// Off-diagonal residual `ρ₁` carried alongside the blocks.
    pub fn residual(&self) -> &CMatrix {
        &self.residual
    }

    /// Current full matrix `Σ_j ρ_j + ρ₁`.
    pub fn rho(&self) -> CMatrix {
        let mut m = self.residual.clone();
        for c in &self.components {
            m += c;
        }
        m
    }

    pub fn residual_trace_norm(&self) -> f64 {
        trace_norm(&self.residual)
    }

    pub fn probabilities(&self) -> &SimplexPoint {
        &self.probs
    }

    /// Applies a reduction increment: `ε_j = dp_j / (2 p_j)`, each block is
    /// scaled by `(1 + ε_j)²`, and the total trace renormalized to one.
    pub fn apply_reduction_increment(&self, dp: &[f64]) -> Result<Self> {
        let mut next = self.clone();
        next.apply_increment_in_place(dp)?;
        Ok(next)
    }

    pub fn apply_increment_in_place(&mut self, dp: &[f64]) -> Result<()> {
        let p = self.probs.coords();
        if dp.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                found: dp.len(),
            });
        }
        let sum: f64 = dp.iter().sum();
        if sum.abs() > ALGEBRAIC_TOL {
            return Err(Error::InvalidIncrement(format!("increments sum to {sum:e}")));
        }
        let mut weights = Vec::with_capacity(p.len());
        for (j, (&pj, &dpj)) in p.iter().zip(dp).enumerate() {
            if pj == 0.0 {
                if dpj != 0.0 {
                    return Err(Error::InvalidIncrement(format!(
                        "block {j} has vanished but receives dp = {dpj:e}"
                    )));
                }
                weights.push(0.0);
                continue;
            }
            if pj + dpj < 0.0 {
                return Err(Error::InvalidIncrement(format!(
                    "p_{j} + dp_{j} = {} is negative",
                    pj + dpj
                )));
            }
            let eps = dpj / (2.0 * pj);
            weights.push((1.0 + eps) * (1.0 + eps));
        }
        self.reweight(&weights)
    }

    /// Rescales every block so the weights become `target`. Blocks whose
    /// target is zero vanish permanently.
    pub fn absorb_to(&mut self, target: &[f64]) -> Result<()> {
        let p = self.probs.coords();
        if target.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                found: target.len(),
            });
        }
        let mut weights = Vec::with_capacity(p.len());
        for (j, (&pj, &tj)) in p.iter().zip(target).enumerate() {
            if tj < 0.0 || (pj == 0.0 && tj != 0.0) {
                return Err(Error::InvalidIncrement(format!(
                    "cannot move block {j} from {pj} to {tj}"
                )));
            }
            weights.push(if pj == 0.0 { 0.0 } else { tj / pj });
        }
        self.reweight(&weights)
    }

    fn reweight(&mut self, weights: &[f64]) -> Result<()> {
        let p = self.probs.coords();
        let total: f64 = p.iter().zip(weights).map(|(a, w)| a * w).sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate(format!("total block weight {total}")));
        }
        for (c, w) in self.components.iter_mut().zip(weights) {
            if *w == 0.0 {
                c.fill(C64::new(0.0, 0.0));
            } else {
                *c *= C64::new(w / total, 0.0);
            }
        }
        self.residual /= C64::new(total, 0.0);
        let mut next: Vec<f64> = p.iter().zip(weights).map(|(a, w)| a * w / total).collect();
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let frozen = next.iter().map(|x| *x == 0.0).collect();
        self.probs = SimplexPoint::from_parts(next, frozen);
        Ok(())
    }

    /// `P_k ρ P_k / Tr(P_k ρ P_k)` of the current state.
    pub fn collapse(&self, k: usize) -> Result<DensityMatrix> {
        if k >= self.family.len() {
            return Err(Error::DimensionMismatch {
                expected: self.family.len(),
                found: k + 1,
            });
        }
        if self.probs.coords()[k] <= 0.0 {
            return Err(Error::ZeroProbabilityCollapse(k));
        }
        let block = self.family.sandwich(k, &self.rho());
        let tr = trace(&block).re;
        if tr <= 0.0 {
            return Err(Error::ZeroProbabilityCollapse(k));
        }
        let mut m = block / C64::new(tr, 0.0);
        // Remove rounding-level anti-Hermitian parts before validation.
        m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        let tr = trace(&m).re;
        DensityMatrix::new(m / C64::new(tr, 0.0))
    }
}

fn probabilities_of(components: &[CMatrix]) -> Result<SimplexPoint> {
    let mut p: Vec<f64> = components.iter().map(|c| trace(c).re).collect();
    if let Some((j, v)) = p.iter().enumerate().find(|(_, v)| **v < -PROBABILITY_TOL) {
        return Err(Error::Numerical(format!("block {j} has negative weight {v:e}")));
    }
    p.iter_mut().for_each(|x| *x = x.max(0.0));
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROBABILITY_TOL {
        return Err(Error::Numerical(format!("block weights sum to {s}")));
    }
    p.iter_mut().for_each(|x| *x /= s);
    let frozen = p.iter().map(|x| *x == 0.0).collect();
    Ok(SimplexPoint::from_parts(p, frozen))
}

/// Drives the walk on the block weights until one block survives and
/// returns the collapsed matrix of that block.
pub fn run_reduction_episode<R: Rng + ?Sized>(
    state: &ReductionState,
    spec: &DiffusionSpec,
    dt: f64,
    rng: &mut R,
    max_steps: u64,
) -> Result<(TrajectoryRecord, DensityMatrix)> {
    run_reduction_episode_with(state, spec, dt, rng, max_steps, DEFAULT_DECOHERENCE_THRESHOLD)
}

pub fn run_reduction_episode_with<R: Rng + ?Sized>(
    state: &ReductionState,
    spec: &DiffusionSpec,
    dt: f64,
    rng: &mut R,
    max_steps: u64,
    decoherence_threshold: f64,
) -> Result<(TrajectoryRecord, DensityMatrix)> {
    if spec.n() != state.family.len() {
        return Err(Error::DimensionMismatch {
            expected: state.family.len(),
            found: spec.n(),
        });
    }
    let norm = state.residual_trace_norm();
    if norm >= decoherence_threshold {
        return Err(Error::NotDecohered {
            norm,
            threshold: decoherence_threshold,
        });
    }
    let mut state = state.clone();
    let mut walker = Walker::new(spec, &state.probs, dt)?;
    while walker.absorbed_vertex().is_none() {
        if walker.steps() >= max_steps {
            return Err(Error::NonTermination {
                max_steps,
                partial: Box::new(walker.into_record()),
            });
        }
        let crossed = walker.step(rng)?;
        if crossed.is_some() {
            state.absorb_to(walker.coords())?;
        } else {
            state.apply_increment_in_place(&walker.increment())?;
        }
        walker.resync(state.probs.coords())?;
    }
    let record = walker.into_record();
    let k = record
        .absorbed_vertex
        .ok_or_else(|| Error::Degenerate("episode ended without absorption".into()))?;
    let collapsed = state.collapse(k)?;
    Ok((record, collapsed))
}

#[cfg(test)]
mod tests {
    use super::super::{max_abs, random_density, random_unitary};
    use super::*;
    use crate::rng::trajectory_stream;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn diag_state(weights: &[f64]) -> ReductionState {
        let n = weights.len();
        let m = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            weights.iter().map(|w| c(*w)),
        ));
        let rho = DensityMatrix::new(m).unwrap();
        let family = ProjectorFamily::coordinate_blocks(&vec![1; n]).unwrap();
        ReductionState::new(&rho, family).unwrap()
    }

    #[test]
    fn probabilities_of_mixed_qubit() {
        let s = diag_state(&[0.5, 0.5]);
        assert_eq!(s.probabilities().coords(), &[0.5, 0.5]);
    }

    #[test]
    fn probabilities_survive_decoherence() {
        let mut rng = trajectory_stream(5, 0);
        let rho = random_density(6, &mut rng).unwrap();
        let u = random_unitary(6, &mut rng);
        let family = ProjectorFamily::from_unitary(&u, &[2, 3, 1]).unwrap();
        let before = ReductionState::new(&rho, family.clone()).unwrap();
        let rho0 = decohere(&rho, &family).unwrap().rho0;
        let after = ReductionState::new(&rho0, family).unwrap();
        for (a, b) in before.probabilities().coords().iter().zip(after.probabilities().coords()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(after.residual_trace_norm() < 1e-12);
    }

    #[test]
    fn zero_increment_is_identity() {
        let s = diag_state(&[0.2, 0.3, 0.5]);
        let t = s.apply_reduction_increment(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.probabilities(), s.probabilities());
        assert_eq!(t.components(), s.components());
    }

    #[test]
    fn increment_follows_block_rescaling() {
        let s = diag_state(&[0.5, 0.5]);
        let t = s.apply_reduction_increment(&[0.1, -0.1]).unwrap();
        // ε = (0.1, −0.1): weights 0.5·1.21 = 0.605 and 0.5·0.81 = 0.405.
        let p = t.probabilities().coords();
        assert_abs_diff_eq!(p[0], 0.605 / 1.01, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.405 / 1.01, epsilon = 1e-15);
        assert_abs_diff_eq!(trace(&t.components()[0]).re, p[0], epsilon = 1e-12);
    }

    #[test]
    fn increment_error_is_second_order() {
        let s = diag_state(&[0.3, 0.7]);
        let deviation = |h: f64| {
            let t = s.apply_reduction_increment(&[h, -h]).unwrap();
            (t.probabilities().coords()[0] - (0.3 + h)).abs()
        };
        let (a, b) = (deviation(1e-2), deviation(5e-3));
        // Halving dp quarters the deviation from p + dp.
        assert_abs_diff_eq!(a / b, 4.0, epsilon = 0.1);
    }

    #[test]
    fn vanished_block_stays_zero() {
        let s = diag_state(&[0.0, 0.4, 0.6]);
        let t = s.apply_reduction_increment(&[0.0, 0.05, -0.05]).unwrap();
        assert_eq!(t.probabilities().coords()[0], 0.0);
        assert!(t.probabilities().is_frozen(0));
        assert!(matches!(
            s.apply_reduction_increment(&[0.01, 0.0, -0.01]),
            Err(Error::InvalidIncrement(_))
        ));
    }

    #[test]
    fn invalid_increments_are_rejected() {
        let s = diag_state(&[0.1, 0.9]);
        assert!(s.apply_reduction_increment(&[-0.2, 0.2]).is_err());
        assert!(s.apply_reduction_increment(&[0.1, 0.0]).is_err());
        assert!(s.apply_reduction_increment(&[0.1]).is_err());
    }

    #[test]
    fn collapse_of_block_diagonal_state() {
        let s = diag_state(&[0.2, 0.8]);
        let r = s.collapse(1).unwrap();
        assert_abs_diff_eq!(r.matrix()[(1, 1)].re, 1.0, epsilon = 1e-15);
        assert!(matches!(diag_state(&[0.0, 1.0]).collapse(0), Err(Error::ZeroProbabilityCollapse(0))));
    }

    #[test]
    fn collapse_of_pure_state_is_the_projector() {
        let psi = [c(0.6), C64::new(0.0, 0.8)];
        let rho = DensityMatrix::pure(&psi).unwrap();
        let family = ProjectorFamily::coordinate_blocks(&[1, 1]).unwrap();
        let s = ReductionState::new(&rho, family.clone()).unwrap();
        for k in 0..2 {
            let r = s.collapse(k).unwrap();
            assert!(max_abs(&(r.matrix() - &family.projectors()[k])) < 1e-12);
            // Collapsing again changes nothing.
            let again = ReductionState::new(&r, family.clone()).unwrap().collapse(k).unwrap();
            assert!(max_abs(&(again.matrix() - r.matrix())) < 1e-12);
        }
    }

    #[test]
    fn episode_from_a_vertex_collapses_immediately() {
        let s = diag_state(&[1.0, 0.0, 0.0]);
        let spec = DiffusionSpec::isotropic(3, 1.0, 1.0).unwrap();
        let mut rng = trajectory_stream(1, 0);
        let (rec, rho) = run_reduction_episode(&s, &spec, 1e-4, &mut rng, 10).unwrap();
        assert_eq!(rec.absorbed_vertex, Some(0));
        assert_eq!(rec.steps_taken, 0);
        assert_abs_diff_eq!(rho.matrix()[(0, 0)].re, 1.0);
    }

    #[test]
    fn undecohered_state_is_refused() {
        let rho = DensityMatrix::new(CMatrix::from_element(2, 2, c(0.5))).unwrap();
        let family = ProjectorFamily::coordinate_blocks(&[1, 1]).unwrap();
        let s = ReductionState::new(&rho, family).unwrap();
        let spec = DiffusionSpec::isotropic(2, 1.0, 1.0).unwrap();
        let mut rng = trajectory_stream(1, 0);
        assert!(matches!(
            run_reduction_episode(&s, &spec, 1e-4, &mut rng, 10),
            Err(Error::NotDecohered { .. })
        ));
    }

    #[test]
    fn episode_ends_in_the_initial_block() {
        let mut rng = trajectory_stream(9, 0);
        let rho = random_density(5, &mut rng).unwrap();
        let u = random_unitary(5, &mut rng);
        let family = ProjectorFamily::from_unitary(&u, &[1, 2, 2]).unwrap();
        let rho0 = decohere(&rho, &family).unwrap().rho0;
        let initial = ReductionState::new(&rho0, family).unwrap();
        let spec = DiffusionSpec::isotropic(3, 1.0, 1.0).unwrap();
        let dt = spec.default_dt().unwrap();
        for i in 0..10 {
            let mut rng = trajectory_stream(21, i);
            let (rec, out) = run_reduction_episode(&initial, &spec, dt, &mut rng, 10_000_000).unwrap();
            let k = rec.absorbed_vertex.unwrap();
            let direct = initial.collapse(k).unwrap();
            assert!(max_abs(&(out.matrix() - direct.matrix())) < 1e-8);
            assert_eq!(rec.descent_events.len(), 2);
        }
    }
}

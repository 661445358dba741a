use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::{check_open_unit, Profile1D};
use crate::error::{Error, Result};

/// Largest accepted residual of the flux series.
pub const FLUX_TOLERANCE: f64 = 1e-4;

const BISECTION_ITERATIONS: usize = 200;

/// Dirichlet modes of `L = d/dξ (D d/dξ)` on `[0, 1]`, sampled on the
/// interior nodes `ξ_i = i h`, `h = 1/(grid + 1)`.
///
/// Eigenfunctions are orthonormal under the trapezoidal inner product.
/// `eigenvalues` are Richardson-extrapolated from the grid and its
/// refinement with half the spacing; `discrete_eigenvalues` are those of
/// the matrix whose eigenvectors are stored.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralSolution {
    pub xi: Vec<f64>,
    pub h: f64,
    pub eigenvalues: Vec<f64>,
    pub discrete_eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub count: usize,
    /// Relative change of the extrapolated `λ_1` under one more halving of `h`.
    pub convergence: f64,
    /// `D` at the half node next to `ξ = 1`, the conductance of the last link.
    pub(crate) right_conductance: f64,
}

impl SpectralSolution {
    /// `ψ_n` at an arbitrary `x ∈ [0, 1]` by linear interpolation, with the
    /// Dirichlet zeros at the ends.
    pub fn mode_at(&self, n: usize, x: f64) -> f64 {
        let psi = &self.eigenfunctions[n];
        let s = x / self.h;
        let i = s.floor() as usize;
        let t = s - i as f64;
        let node = |k: usize| {
            if k == 0 || k > psi.len() {
                0.0
            } else {
                psi[k - 1]
            }
        };
        (1.0 - t) * node(i) + t * node(i + 1)
    }

    /// Trapezoidal inner product `⟨f, g⟩` of interior samples.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.h * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `max |⟨ψ_m, ψ_n⟩ − δ_mn|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for m in 0..self.count {
            for n in m..self.count {
                let g = self.inner(&self.eigenfunctions[m], &self.eigenfunctions[n]);
                let target = if m == n { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

/// Tridiagonal conservative discretization: diagonal and the coupling of
/// node `i` to `i + 1`, plus the conductances at all half nodes.
fn operator(profile: &Profile1D, grid: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = 1.0 / (grid + 1) as f64;
    let half: Vec<f64> = (0..=grid).map(|i| profile.d((i as f64 + 0.5) * h)).collect();
    let h2 = h * h;
    let diag = (0..grid).map(|i| (half[i] + half[i + 1]) / h2).collect();
    let off = (0..grid - 1).map(|i| -half[i + 1] / h2).collect();
    (diag, off, half)
}

/// Number of eigenvalues of the tridiagonal matrix below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    for i in 0..diag.len() {
        if i > 0 {
            q = diag[i] - x - off[i - 1] * off[i - 1] / q;
        }
        if q == 0.0 {
            q = -f64::EPSILON * (diag[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Lowest `count` eigenvalues of a symmetric tridiagonal matrix by bisection.
fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64], count: usize) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..diag.len() {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + off.get(i).map_or(0.0, |v| v.abs());
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    (0..count)
        .map(|k| {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..BISECTION_ITERATIONS {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if sturm_count(diag, off, mid) > k {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

fn refined_eigenvalues(profile: &Profile1D, grid: usize, count: usize) -> Vec<f64> {
    let (diag, off, _) = operator(profile, grid);
    tridiagonal_eigenvalues(&diag, &off, count)
}

/// Solves `L ψ_n = −λ_n ψ_n` with `ψ_n(0) = ψ_n(1) = 0` for the lowest
/// `count` modes on the profile's grid.
pub fn sturm_liouville_modes(profile: &Profile1D, count: usize) -> Result<SpectralSolution> {
    profile.validate()?;
    let grid = profile.grid;
    if count == 0 || count > grid / 4 {
        return Err(Error::Profile(format!(
            "mode count {count} must be in 1..={} for grid {grid}",
            grid / 4
        )));
    }
    let h = 1.0 / (grid + 1) as f64;
    let (diag, off, half) = operator(profile, grid);
    let dense = DMatrix::from_fn(grid, grid, |i, j| {
        if i == j {
            diag[i]
        } else if j == i + 1 {
            off[i]
        } else if i == j + 1 {
            off[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::try_new(dense, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigen solve did not converge".into()))?;
    let mut order: Vec<usize> = (0..grid).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let scale = 1.0 / h.sqrt();
    let mut discrete = Vec::with_capacity(count);
    let mut eigenfunctions = Vec::with_capacity(count);
    for &k in order.iter().take(count) {
        discrete.push(eig.eigenvalues[k]);
        let col = eig.eigenvectors.column(k);
        // Fix the sign so that ψ_n'(0) > 0.
        let lead = col.iter().find(|v| v.abs() > 1e-8).copied().unwrap_or(1.0);
        let sign = lead.signum();
        eigenfunctions.push(col.iter().map(|v| sign * scale * v).collect());
    }

    // Bisection on this grid and two refinements (h/2, h/4) for extrapolation.
    let base = tridiagonal_eigenvalues(&diag, &off, count);
    let fine = refined_eigenvalues(profile, 2 * grid + 1, count);
    let finer = refined_eigenvalues(profile, 4 * grid + 3, 1);
    let eigenvalues: Vec<f64> = base
        .iter()
        .zip(&fine)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect();
    let next = (4.0 * finer[0] - fine[0]) / 3.0;
    let convergence = ((next - eigenvalues[0]) / next).abs();

    if eigenvalues.iter().any(|l| !(*l > 0.0))
        || eigenvalues.windows(2).any(|w| !(w[1] > w[0]))
        || discrete.windows(2).any(|w| !(w[1] > w[0]))
    {
        return Err(Error::Numerical(
            "spectrum is not strictly positive and increasing".into(),
        ));
    }

    Ok(SpectralSolution {
        xi: (1..=grid).map(|i| i as f64 * h).collect(),
        h,
        eigenvalues,
        discrete_eigenvalues: discrete,
        eigenfunctions,
        count,
        convergence,
        right_conductance: half[grid],
    })
}

/// Truncated flux series for the probability of absorption at `ξ = 1`.
#[derive(Clone, Debug, Serialize)]
pub struct FluxSeries {
    pub value: f64,
    /// Change of the partial sum between `count / 2` and `count` modes.
    pub residual: f64,
    pub terms: usize,
}

/// Sums the time-integrated flux through `ξ = 1`,
/// `P(α) = −D(1) Σ_n ψ_n(α) ψ_n'(1) / λ_n`, with `ψ_n'(1)` taken as the
/// one-sided difference `−ψ_n(1 − h) / h`.
///
/// The raw series converges like `1/n`. It is summed after subtracting the
/// expansion of the linear function `ξ`, which is added back exactly; the
/// remaining coefficients belong to `P − ξ`, which vanishes at both ends
/// and decays fast.
pub fn flux_series(profile: &Profile1D, alpha: f64, count: usize) -> Result<FluxSeries> {
    check_open_unit(alpha)?;
    if profile.nu != 0.0 {
        return Err(Error::Profile("the flux series needs an undrifted profile".into()));
    }
    let sol = sturm_liouville_modes(profile, count)?;
    let last = sol.xi.len() - 1;
    let term = |n: usize| {
        let psi = &sol.eigenfunctions[n];
        let flux = sol.right_conductance * psi[last] / (sol.h * sol.discrete_eigenvalues[n]);
        let linear = sol.inner(psi, &sol.xi);
        (flux - linear) * sol.mode_at(n, alpha)
    };
    let terms: Vec<f64> = (0..count).map(term).collect();
    let value = alpha + terms.iter().sum::<f64>();
    let half = alpha + terms[..count / 2].iter().sum::<f64>();
    Ok(FluxSeries {
        value,
        residual: (value - half).abs(),
        terms: count,
    })
}

/// [`flux_series`] value, or [`Error::SeriesNotConverged`] when its residual
/// exceeds [`FLUX_TOLERANCE`].
pub fn flux_hitting_probability(profile: &Profile1D, alpha: f64, count: usize) -> Result<f64> {
    let s = flux_series(profile, alpha, count)?;
    if s.residual > FLUX_TOLERANCE {
        return Err(Error::SeriesNotConverged {
            residual: s.residual,
            tolerance: FLUX_TOLERANCE,
        });
    }
    Ok(s.value)
}

/// Density of the surviving walk at time `t`, sampled on `[0, 1]`
/// including the absorbing ends.
#[derive(Clone, Debug, Serialize)]
pub struct DensitySnapshot {
    pub xi: Vec<f64>,
    pub values: Vec<f64>,
    /// Trapezoidal `∫ ρ dξ`, the probability not yet absorbed.
    pub mass: f64,
    /// Estimated sup-norm of the discarded modes.
    pub truncation_bound: f64,
}

/// `ρ(ξ, t) = Σ_n ψ_n(α) ψ_n(ξ) e^{−λ_n t}` over the retained modes.
pub fn reconstruct_density(sol: &SpectralSolution, alpha: f64, t: f64) -> Result<DensitySnapshot> {
    check_open_unit(alpha)?;
    if !(t >= 0.0) {
        return Err(Error::Domain {
            value: t,
            domain: "t ≥ 0",
        });
    }
    let weights: Vec<f64> = (0..sol.count)
        .map(|n| sol.mode_at(n, alpha) * (-sol.eigenvalues[n] * t).exp())
        .collect();
    let mut values = vec![0.0; sol.xi.len() + 2];
    for (n, w) in weights.iter().enumerate() {
        for (v, psi) in values[1..].iter_mut().zip(&sol.eigenfunctions[n]) {
            *v += w * psi;
        }
    }
    let mass = sol.h * values.iter().sum::<f64>();
    let mut xi = Vec::with_capacity(values.len());
    xi.push(0.0);
    xi.extend_from_slice(&sol.xi);
    xi.push(1.0);

    // Discarded modes grow like λ_m ≈ λ_K (m / K)² with amplitudes bounded by
    // the largest retained |ψ|.
    let amp = sol
        .eigenfunctions
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let lk = sol.eigenvalues[sol.count - 1];
    let k = sol.count as f64;
    let truncation_bound = if t == 0.0 {
        f64::INFINITY
    } else {
        let mut sum = 0.0;
        for m in sol.count + 1..sol.count + 1_000_000 {
            let term = (-lk * (m as f64 / k).powi(2) * t).exp();
            sum += term;
            if term < 1e-18 * sum.max(f64::MIN_POSITIVE) || term == 0.0 {
                break;
            }
        }
        amp * amp * sum
    };
    Ok(DensitySnapshot {
        xi,
        values,
        mass,
        truncation_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::super::hitting_probability_ode;
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn laplacian_spectrum() {
        let sol = sturm_liouville_modes(&Profile1D::constant(1.0), 8).unwrap();
        for n in 0..8 {
            let exact = ((n + 1) as f64 * PI).powi(2);
            assert!((sol.eigenvalues[n] - exact).abs() / exact < 1e-6);
        }
        for (k, &x) in sol.xi.iter().enumerate().step_by(37) {
            assert_abs_diff_eq!(sol.eigenfunctions[1][k], 2f64.sqrt() * (2.0 * PI * x).sin(), epsilon = 1e-4);
        }
        assert!(sol.orthonormality_error() < 1e-8);
        assert!(sol.convergence < 1e-6);
    }

    #[test]
    fn larger_coefficient_raises_every_eigenvalue() {
        let base = sturm_liouville_modes(&Profile1D::constant(1.0), 16).unwrap();
        let lin = sturm_liouville_modes(&Profile1D::linear(1.0), 16).unwrap();
        for (a, b) in base.eigenvalues.iter().zip(&lin.eigenvalues) {
            assert!(b > a);
        }
    }

    #[test]
    fn bisection_agrees_with_dense_solve() {
        let sol = sturm_liouville_modes(&Profile1D::sinusoidal(0.7).with_grid(64), 16).unwrap();
        let (d, o, _) = operator(&Profile1D::sinusoidal(0.7), 64);
        let bis = tridiagonal_eigenvalues(&d, &o, 16);
        for (a, b) in sol.discrete_eigenvalues.iter().zip(&bis) {
            assert!((a - b).abs() / b < 1e-11);
        }
    }

    #[test]
    fn mode_count_limits() {
        let prof = Profile1D::constant(1.0).with_grid(64);
        assert!(sturm_liouville_modes(&prof, 16).is_ok());
        assert!(sturm_liouville_modes(&prof, 17).is_err());
        assert!(sturm_liouville_modes(&prof, 0).is_err());
    }

    #[test]
    fn flux_series_for_constant_profile() {
        let prof = Profile1D::constant(1.0);
        let p = flux_hitting_probability(&prof, 0.3, 64).unwrap();
        assert_abs_diff_eq!(p, 0.3, epsilon = 1e-4);
        let q = flux_hitting_probability(&prof, 0.7, 64).unwrap();
        assert_abs_diff_eq!(p + q, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn flux_series_for_linear_profile() {
        let prof = Profile1D::linear(1.0);
        let p = flux_hitting_probability(&prof, 0.5, 64).unwrap();
        assert_abs_diff_eq!(p, hitting_probability_ode(&prof, 0.5).unwrap(), epsilon = 1e-4);
    }

    #[test]
    fn flux_series_reports_poor_convergence() {
        let prof = Profile1D::linear(5.0).with_grid(16);
        match flux_hitting_probability(&prof, 0.3, 2) {
            Err(Error::SeriesNotConverged { residual, .. }) => assert!(residual > FLUX_TOLERANCE),
            other => panic!("expected a convergence error, got {other:?}"),
        }
        assert!(flux_series(&Profile1D::constant(1.0).with_nu(1.0), 0.5, 8).is_err());
    }

    #[test]
    fn density_decays_and_stays_symmetric() {
        let sol = sturm_liouville_modes(&Profile1D::constant(1.0), 64).unwrap();
        let early = reconstruct_density(&sol, 0.5, 0.01).unwrap();
        let late = reconstruct_density(&sol, 0.5, 0.05).unwrap();
        assert!(late.mass < early.mass);
        let snap = reconstruct_density(&sol, 0.5, 0.1).unwrap();
        let m = snap.values.len();
        for i in 0..m {
            assert!((snap.values[i] - snap.values[m - 1 - i]).abs() < 1e-10 + snap.truncation_bound);
        }
        let gone = reconstruct_density(&sol, 0.5, 50.0).unwrap();
        assert!(gone.values.iter().all(|v| v.abs() < 1e-100));
        assert!(reconstruct_density(&sol, 0.5, -1.0).is_err());
    }
}

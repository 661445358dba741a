//! Finite-dimensional density matrices, projector families, and the
//! decoherence split `ρ = ρ₀ + ρ₁` with `ρ₀ = Σ_j P_j ρ P_j`.

pub mod fixture;
mod reduction;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use reduction::{
    run_reduction_episode, run_reduction_episode_with, ReductionState, DEFAULT_DECOHERENCE_THRESHOLD,
};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const POSITIVITY_TOL: f64 = 1e-10;
const PROJECTOR_TOL: f64 = 1e-10;
/// Largest supported Hilbert-space dimension.
pub const MAX_DIM: usize = 256;

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    // Symmetrize first; the eigen solver only reads one triangle.
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(h).eigenvalues.iter().copied().collect()
}

/// Trace norm `Tr|A|` of a Hermitian matrix (sum of absolute eigenvalues).
pub fn trace_norm(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).iter().map(|x| x.abs()).sum()
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: CMatrix,
}

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let dim = m.nrows();
        if dim == 0 || m.ncols() != dim {
            return Err(Error::InvalidDensity(format!(
                "matrix must be square and non-empty, got {}×{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if dim > MAX_DIM {
            return Err(Error::InvalidDensity(format!("dimension {dim} exceeds {MAX_DIM}")));
        }
        let asym = max_abs(&(&m - m.adjoint()));
        if asym > HERMITIAN_TOL {
            return Err(Error::InvalidDensity(format!("not Hermitian (deviation {asym:e})")));
        }
        let tr = trace(&m);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace is {tr}, expected 1")));
        }
        let min = hermitian_eigenvalues(&m).into_iter().fold(f64::INFINITY, f64::min);
        if min < -POSITIVITY_TOL {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self { m })
    }

    /// `|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm2 == 0.0 {
            return Err(Error::InvalidDensity("zero state vector".into()));
        }
        let v = nalgebra::DVector::from_column_slice(psi);
        Self::new(&v * v.adjoint() / C64::new(norm2, 0.0))
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        Self::new(CMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }
}

/// Mutually orthogonal projectors summing to the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorFamily {
    dim: usize,
    projectors: Vec<CMatrix>,
}

impl ProjectorFamily {
    pub fn new(projectors: Vec<CMatrix>) -> Result<Self> {
        let Some(first) = projectors.first() else {
            return Err(Error::ProjectorAlgebra("empty family".into()));
        };
        let dim = first.nrows();
        if dim > MAX_DIM {
            return Err(Error::ProjectorAlgebra(format!("dimension {dim} exceeds {MAX_DIM}")));
        }
        for (j, p) in projectors.iter().enumerate() {
            if p.nrows() != dim || p.ncols() != dim {
                return Err(Error::ProjectorAlgebra(format!(
                    "P_{j} is {}×{}, expected {dim}×{dim}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            let herm = max_abs(&(p - p.adjoint()));
            if herm > PROJECTOR_TOL {
                return Err(Error::ProjectorAlgebra(format!(
                    "P_{j} is not Hermitian (deviation {herm:e})"
                )));
            }
            let idem = max_abs(&(p * p - p));
            if idem > PROJECTOR_TOL {
                return Err(Error::ProjectorAlgebra(format!(
                    "P_{j}² ≠ P_{j} (deviation {idem:e})"
                )));
            }
        }
        for j in 0..projectors.len() {
            for k in j + 1..projectors.len() {
                let cross = max_abs(&(&projectors[j] * &projectors[k]));
                if cross > PROJECTOR_TOL {
                    return Err(Error::ProjectorAlgebra(format!(
                        "P_{j} P_{k} ≠ 0 (deviation {cross:e})"
                    )));
                }
            }
        }
        let mut sum = CMatrix::zeros(dim, dim);
        for p in &projectors {
            sum += p;
        }
        let completeness = max_abs(&(sum - CMatrix::identity(dim, dim)));
        if completeness > PROJECTOR_TOL {
            return Err(Error::ProjectorAlgebra(format!(
                "Σ P_j ≠ I (deviation {completeness:e})"
            )));
        }
        Ok(Self { dim, projectors })
    }

    /// Projectors onto consecutive blocks of basis vectors with the given sizes.
    pub fn coordinate_blocks(sizes: &[usize]) -> Result<Self> {
        let dim: usize = sizes.iter().sum();
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            if s == 0 {
                return Err(Error::ProjectorAlgebra("empty block".into()));
            }
            let mut p = CMatrix::zeros(dim, dim);
            for i in start..start + s {
                p[(i, i)] = C64::new(1.0, 0.0);
            }
            out.push(p);
            start += s;
        }
        Self::new(out)
    }

    /// Projectors onto consecutive groups of columns of a unitary matrix.
    pub fn from_unitary(u: &CMatrix, sizes: &[usize]) -> Result<Self> {
        let dim = u.nrows();
        if sizes.iter().sum::<usize>() != dim {
            return Err(Error::ProjectorAlgebra(format!(
                "block sizes {sizes:?} do not add up to {dim}"
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            if s == 0 {
                return Err(Error::ProjectorAlgebra("empty block".into()));
            }
            let cols = u.columns(start, s);
            out.push(&cols * cols.adjoint());
            start += s;
        }
        Self::new(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn projectors(&self) -> &[CMatrix] {
        &self.projectors
    }

    pub fn sandwich(&self, j: usize, m: &CMatrix) -> CMatrix {
        let p = &self.projectors[j];
        p * m * p
    }
}

/// Result of [`decohere`].
#[derive(Clone, Debug)]
pub struct Decoherence {
    /// Block-diagonal part `Σ_j P_j ρ P_j`.
    pub rho0: DensityMatrix,
    /// Off-diagonal residual `ρ − ρ₀`; traceless.
    pub rho1: CMatrix,
    /// `Tr|ρ₁|`.
    pub trace_norm: f64,
}

pub fn decohere(rho: &DensityMatrix, family: &ProjectorFamily) -> Result<Decoherence> {
    if rho.dim() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            found: rho.dim(),
        });
    }
    let mut rho0 = CMatrix::zeros(rho.dim(), rho.dim());
    for j in 0..family.len() {
        rho0 += family.sandwich(j, rho.matrix());
    }
    let rho1 = rho.matrix() - &rho0;
    let trace_norm = trace_norm(&rho1);
    Ok(Decoherence {
        rho0: DensityMatrix::new(rho0)?,
        rho1,
        trace_norm,
    })
}

/// Random density matrix `A A† / Tr(A A†)` with complex Gaussian `A`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DensityMatrix> {
    let a = random_gaussian(dim, rng);
    let m = &a * a.adjoint();
    let tr = trace(&m);
    let mut m = m / tr;
    // Exact Hermiticity and unit trace after rounding.
    m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let tr = trace(&m).re;
    DensityMatrix::new(m / C64::new(tr, 0.0))
}

/// Random unitary from the QR decomposition of a complex Gaussian matrix.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    random_gaussian(dim, rng).qr().q()
}

fn random_gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

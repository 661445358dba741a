//! Geometry of the probability simplex.
//!
//! A state is a probability vector `p` (barycentric coordinates of a point in
//! the hyperplane `Σ p = 1`). A [`SimplexChart`] is an orthonormal frame for
//! that hyperplane, mapping `p` to `n - 1` Cartesian coordinates `ξ` and back.
//! Coordinates that reach zero are *frozen*: the walk never leaves the face it
//! has descended onto.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance for algebraic identities (sums, orthonormality, round trips).
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Width of the band below zero still accepted as "on the simplex".
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimplexPoint {
    p: Vec<f64>,
    frozen: Vec<bool>,
}

impl SimplexPoint {
    /// Builds a point from probabilities. Coordinates that are exactly zero
    /// start out frozen.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        let n = p.len();
        if n < 2 {
            return Err(Error::InvalidDimension(n));
        }
        if let Some(k) = p.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::OutOfSimplex {
                reason: format!("coordinate {k} is negative or not finite"),
                coords: p,
            });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > ALGEBRAIC_TOL {
            return Err(Error::OutOfSimplex {
                reason: format!("coordinates sum to {sum}"),
                coords: p,
            });
        }
        let frozen = p.iter().map(|&x| x == 0.0).collect();
        Ok(Self { p, frozen })
    }

    pub fn barycenter(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDimension(n));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn vertex(n: usize, k: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDimension(n));
        }
        if k >= n {
            return Err(Error::DimensionMismatch { expected: n, found: k + 1 });
        }
        let mut p = vec![0.0; n];
        p[k] = 1.0;
        Self::new(p)
    }

    /// Internal constructor for states produced by the engine, whose
    /// invariants are maintained by construction.
    pub(crate) fn from_parts(p: Vec<f64>, frozen: Vec<bool>) -> Self {
        debug_assert_eq!(p.len(), frozen.len());
        Self { p, frozen }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.p
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn is_frozen(&self, k: usize) -> bool {
        self.frozen[k]
    }

    pub fn frozen_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&k| self.frozen[k]).collect()
    }

    pub fn active_count(&self) -> usize {
        self.frozen.iter().filter(|f| !**f).count()
    }

    /// The single surviving coordinate once the walk has reached a vertex.
    pub fn absorbed_vertex(&self) -> Option<usize> {
        if self.active_count() == 1 {
            self.frozen.iter().position(|f| !f)
        } else {
            None
        }
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<bool>) {
        (self.p, self.frozen)
    }

    /// Freezes coordinate `k` at exactly zero and renormalizes the surviving
    /// coordinates by `1 / (1 - p_k)`, so ratios among survivors are kept.
    ///
    /// Only the named coordinate is touched; if other coordinates are also
    /// below zero the caller descends through them in turn.
    pub fn descend_to_face(&self, k: usize) -> Result<Self> {
        let n = self.dim();
        if k >= n {
            return Err(Error::DimensionMismatch { expected: n, found: k + 1 });
        }
        if self.frozen[k] {
            return Err(Error::AlreadyFrozen(k));
        }
        let pk = self.p[k];
        if pk > MEMBERSHIP_TOL {
            return Err(Error::NotOnFace {
                index: k,
                value: pk,
                tolerance: MEMBERSHIP_TOL,
            });
        }
        let denom = 1.0 - pk;
        if denom <= 0.0 || !denom.is_finite() {
            return Err(Error::Degenerate(format!(
                "cannot renormalize after freezing {k}: surviving mass {denom}"
            )));
        }
        let mut p = self.p.clone();
        let mut frozen = self.frozen.clone();
        p[k] = 0.0;
        frozen[k] = true;
        for (x, f) in p.iter_mut().zip(&frozen) {
            if !f {
                *x /= denom;
            }
        }
        Ok(Self { p, frozen })
    }
}

/// Orthonormal Cartesian frame of the hyperplane `Σ p = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexChart {
    n: usize,
    basis: DMatrix<f64>,
}

impl SimplexChart {
    /// Gram–Schmidt on `e_1 - e_2, e_2 - e_3, …`; each of these is already
    /// orthogonal to the normal `(1, …, 1) / √n`.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDimension(n));
        }
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v[i + 1] = -1.0;
            for r in &rows {
                let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
            }
            // Second pass keeps orthogonality at machine precision for large n.
            for r in &rows {
                let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
        let basis = DMatrix::from_fn(n - 1, n, |i, j| rows[i][j]);
        Ok(Self { n, basis })
    }

    /// Accepts any `(n-1) × n` matrix whose rows are orthonormal and
    /// orthogonal to `(1, …, 1)`.
    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        let n = basis.ncols();
        if n < 2 {
            return Err(Error::InvalidDimension(n));
        }
        if basis.nrows() != n - 1 {
            return Err(Error::DimensionMismatch {
                expected: n - 1,
                found: basis.nrows(),
            });
        }
        let gram = &basis * basis.transpose();
        let id = DMatrix::<f64>::identity(n - 1, n - 1);
        let err = (gram - id).abs().max();
        if err > ALGEBRAIC_TOL {
            return Err(Error::Spec(format!(
                "chart rows are not orthonormal (max deviation {err:e})"
            )));
        }
        for i in 0..n - 1 {
            let s: f64 = basis.row(i).sum();
            if s.abs() > ALGEBRAIC_TOL * (n as f64).sqrt() {
                return Err(Error::Spec(format!(
                    "chart row {i} is not orthogonal to the simplex normal ({s:e})"
                )));
            }
        }
        Ok(Self { n, basis })
    }

    /// Rotates axes `i` and `j` of this chart by `angle`. The result is
    /// another valid chart of the same hyperplane.
    pub fn rotated(&self, i: usize, j: usize, angle: f64) -> Result<Self> {
        let m = self.n - 1;
        if i >= m || j >= m || i == j {
            return Err(Error::Spec(format!("invalid rotation plane ({i}, {j})")));
        }
        let (s, c) = angle.sin_cos();
        let mut basis = self.basis.clone();
        let ri = self.basis.row(i).clone_owned();
        let rj = self.basis.row(j).clone_owned();
        basis.set_row(i, &(&ri * c - &rj * s));
        basis.set_row(j, &(&ri * s + &rj * c));
        Self::from_basis(basis)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Matrix `R` with `ξ_other = R ξ_self` for points of the hyperplane.
    pub fn transition_to(&self, other: &SimplexChart) -> Result<DMatrix<f64>> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(&other.basis * self.basis.transpose())
    }

    pub fn to_cartesian(&self, pt: &SimplexPoint) -> Result<Vec<f64>> {
        if pt.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: pt.dim(),
            });
        }
        let mut xi = vec![0.0; self.n - 1];
        self.project_into(pt.coords(), &mut xi);
        Ok(xi)
    }

    /// `ξ = B p` without checks or allocation.
    pub(crate) fn project_into(&self, p: &[f64], xi: &mut [f64]) {
        for (j, x) in xi.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, pk) in p.iter().enumerate() {
                acc += self.basis[(j, k)] * pk;
            }
            *x = acc;
        }
    }

    /// `dp = Bᵀ dξ` without checks or allocation.
    pub(crate) fn lift_into(&self, dxi: &[f64], dp: &mut [f64]) {
        for (k, d) in dp.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, x) in dxi.iter().enumerate() {
                acc += self.basis[(j, k)] * x;
            }
            *d = acc;
        }
    }

    pub fn from_cartesian(&self, xi: &[f64]) -> Result<SimplexPoint> {
        if xi.len() != self.n - 1 {
            return Err(Error::DimensionMismatch {
                expected: self.n - 1,
                found: xi.len(),
            });
        }
        let mut p = vec![0.0; self.n];
        self.lift_into(xi, &mut p);
        let offset = 1.0 / self.n as f64;
        p.iter_mut().for_each(|x| *x += offset);
        if p.iter().any(|x| *x < -MEMBERSHIP_TOL || !x.is_finite()) {
            return Err(Error::OutOfSimplex {
                reason: "preimage leaves the closed simplex".into(),
                coords: p,
            });
        }
        if p.iter().any(|x| *x < 0.0) {
            p.iter_mut().for_each(|x| *x = x.max(0.0));
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
        }
        let frozen = p.iter().map(|&x| x == 0.0).collect();
        Ok(SimplexPoint::from_parts(p, frozen))
    }
}

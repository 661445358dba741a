//! Position-dependent correlation matrices and drifts, in chart coordinates.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

/// Step used for central-difference divergences.
const FD_STEP: f64 = 1e-5;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&[f64], &mut DMatrix<f64>) + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `ξ ↦ C(ξ)`, the instantaneous covariance rate of `dξ` per unit of `τ`.
pub trait CorrelationField: Send + Sync + fmt::Debug {
    /// Number of chart coordinates (`n - 1`).
    fn dim(&self) -> usize;

    fn eval(&self, xi: &[f64], out: &mut DMatrix<f64>);

    fn is_constant(&self) -> bool {
        false
    }

    /// `(∇·C)_j = Σ_m ∂_m C_jm`, by central differences unless overridden.
    fn divergence(&self, xi: &[f64], out: &mut [f64]) {
        let m = self.dim();
        out.iter_mut().for_each(|x| *x = 0.0);
        if self.is_constant() {
            return;
        }
        let mut shifted = xi.to_vec();
        let mut plus = DMatrix::zeros(m, m);
        let mut minus = DMatrix::zeros(m, m);
        for k in 0..m {
            shifted[k] = xi[k] + FD_STEP;
            self.eval(&shifted, &mut plus);
            shifted[k] = xi[k] - FD_STEP;
            self.eval(&shifted, &mut minus);
            shifted[k] = xi[k];
            for (j, o) in out.iter_mut().enumerate() {
                *o += (plus[(j, k)] - minus[(j, k)]) / (2.0 * FD_STEP);
            }
        }
    }
}

/// `ξ ↦ ν(ξ)`, the mean velocity of `ξ` per unit of `τ`.
pub trait DriftField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, xi: &[f64], out: &mut [f64]);

    fn is_zero(&self) -> bool {
        false
    }

    fn is_constant(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
pub struct ConstantCorrelation(pub DMatrix<f64>);

impl CorrelationField for ConstantCorrelation {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn eval(&self, _xi: &[f64], out: &mut DMatrix<f64>) {
        out.copy_from(&self.0);
    }

    fn is_constant(&self) -> bool {
        true
    }
}

/// `C(ξ) = s(ξ) · base` for a positive scalar field `s`.
#[derive(Clone)]
pub struct ScaledCorrelation {
    base: DMatrix<f64>,
    scale: ScalarFn,
}

impl ScaledCorrelation {
    pub fn new(base: DMatrix<f64>, scale: ScalarFn) -> Self {
        Self { base, scale }
    }
}

impl fmt::Debug for ScaledCorrelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScaledCorrelation")
            .field("base", &self.base)
            .finish_non_exhaustive()
    }
}

impl CorrelationField for ScaledCorrelation {
    fn dim(&self) -> usize {
        self.base.nrows()
    }

    fn eval(&self, xi: &[f64], out: &mut DMatrix<f64>) {
        let s = (self.scale)(xi);
        out.copy_from(&self.base);
        *out *= s;
    }

    // Only the scalar needs differentiating: (∇·C)_j = Σ_m base_jm ∂_m s.
    fn divergence(&self, xi: &[f64], out: &mut [f64]) {
        let m = self.dim();
        let mut shifted = xi.to_vec();
        out.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..m {
            shifted[k] = xi[k] + FD_STEP;
            let up = (self.scale)(&shifted);
            shifted[k] = xi[k] - FD_STEP;
            let down = (self.scale)(&shifted);
            shifted[k] = xi[k];
            let grad = (up - down) / (2.0 * FD_STEP);
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.base[(j, k)] * grad;
            }
        }
    }
}

/// Arbitrary correlation field given by a closure.
#[derive(Clone)]
pub struct FnCorrelation {
    dim: usize,
    f: MatrixFn,
}

impl FnCorrelation {
    pub fn new(dim: usize, f: MatrixFn) -> Self {
        Self { dim, f }
    }
}

impl fmt::Debug for FnCorrelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnCorrelation").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl CorrelationField for FnCorrelation {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, xi: &[f64], out: &mut DMatrix<f64>) {
        (self.f)(xi, out)
    }
}

/// A correlation field re-expressed in another chart: `C'(ξ') = R C(Rᵀξ') Rᵀ`.
#[derive(Clone, Debug)]
pub struct TransportedCorrelation {
    inner: Arc<dyn CorrelationField>,
    rotation: DMatrix<f64>,
}

impl TransportedCorrelation {
    pub fn new(inner: Arc<dyn CorrelationField>, rotation: DMatrix<f64>) -> Self {
        Self { inner, rotation }
    }

    fn pull_back(&self, xi: &[f64]) -> Vec<f64> {
        let m = self.dim();
        (0..m)
            .map(|c| (0..m).map(|j| self.rotation[(j, c)] * xi[j]).sum())
            .collect()
    }
}

impl CorrelationField for TransportedCorrelation {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, xi: &[f64], out: &mut DMatrix<f64>) {
        let m = self.dim();
        let mut c = DMatrix::zeros(m, m);
        self.inner.eval(&self.pull_back(xi), &mut c);
        out.copy_from(&(&self.rotation * c * self.rotation.transpose()));
    }

    fn is_constant(&self) -> bool {
        self.inner.is_constant()
    }

    fn divergence(&self, xi: &[f64], out: &mut [f64]) {
        let mut div = vec![0.0; self.dim()];
        self.inner.divergence(&self.pull_back(xi), &mut div);
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..div.len()).map(|a| self.rotation[(j, a)] * div[a]).sum();
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConstantDrift(pub Vec<f64>);

impl ConstantDrift {
    pub fn zero(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }
}

impl DriftField for ConstantDrift {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn eval(&self, _xi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }

    fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }

    fn is_constant(&self) -> bool {
        true
    }
}

#[derive(Clone)]
pub struct FnDrift {
    dim: usize,
    f: VectorFn,
}

impl FnDrift {
    pub fn new(dim: usize, f: VectorFn) -> Self {
        Self { dim, f }
    }
}

impl fmt::Debug for FnDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDrift").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl DriftField for FnDrift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, xi: &[f64], out: &mut [f64]) {
        (self.f)(xi, out)
    }
}

/// A drift re-expressed in another chart: `ν'(ξ') = R ν(Rᵀξ')`.
#[derive(Clone, Debug)]
pub struct TransportedDrift {
    inner: Arc<dyn DriftField>,
    rotation: DMatrix<f64>,
}

impl TransportedDrift {
    pub fn new(inner: Arc<dyn DriftField>, rotation: DMatrix<f64>) -> Self {
        Self { inner, rotation }
    }
}

impl DriftField for TransportedDrift {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, xi: &[f64], out: &mut [f64]) {
        let m = self.dim();
        let back: Vec<f64> = (0..m)
            .map(|c| (0..m).map(|j| self.rotation[(j, c)] * xi[j]).sum())
            .collect();
        let mut v = vec![0.0; m];
        self.inner.eval(&back, &mut v);
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..m).map(|a| self.rotation[(j, a)] * v[a]).sum();
        }
    }

    fn is_zero(&self) -> bool {
        self.inner.is_zero()
    }

    fn is_constant(&self) -> bool {
        self.inner.is_constant()
    }
}

use std::fmt;
use std::sync::Arc;

use crate::diffusion::ScalarFn;
use crate::error::{Error, Result};

/// Smallest diffusion coefficient accepted anywhere on `[0, 1]`.
pub const D_MIN: f64 = 1e-8;
pub const MIN_GRID: usize = 16;
pub const DEFAULT_GRID: usize = 512;
pub const DEFAULT_MODES: usize = 64;

const VALIDATION_SAMPLES: usize = 4096;

/// Diffusion coefficient `D(ξ)` on the unit interval.
#[derive(Clone)]
pub enum Diffusivity {
    Constant(f64),
    /// `1 + c ξ`
    Linear { c: f64 },
    /// `1 + c sin(π ξ)`
    Sinusoidal { c: f64 },
    Tabulated(MonotoneCubic),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Diffusivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(d) => write!(f, "Constant({d})"),
            Self::Linear { c } => write!(f, "Linear {{ c: {c} }}"),
            Self::Sinusoidal { c } => write!(f, "Sinusoidal {{ c: {c} }}"),
            Self::Tabulated(t) => write!(f, "Tabulated({} knots)", t.xs.len()),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Diffusivity {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Constant(d) => *d,
            Self::Linear { c } => 1.0 + c * x,
            Self::Sinusoidal { c } => 1.0 + c * (std::f64::consts::PI * x).sin(),
            Self::Tabulated(t) => t.eval(x),
            Self::Custom(f) => f(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Self::Constant(_) => true,
            Self::Linear { c } | Self::Sinusoidal { c } => *c == 0.0,
            Self::Tabulated(t) => t.ys.windows(2).all(|w| w[0] == w[1]),
            Self::Custom(_) => false,
        }
    }

    /// Points inside `(0, 1)` where the profile is only piecewise smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Tabulated(t) => t.xs[1..t.xs.len() - 1].to_vec(),
            _ => Vec::new(),
        }
    }
}

/// Fritsch–Carlson monotone cubic Hermite interpolant through `(x, y)`
/// pairs covering `[0, 1]`. Monotone runs of the data stay monotone, so a
/// positive table never interpolates to a negative coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::Profile(format!(
                "need at least two (ξ, D) pairs of equal length, got {} and {}",
                xs.len(),
                ys.len()
            )));
        }
        if xs[0] != 0.0 || xs[xs.len() - 1] != 1.0 {
            return Err(Error::Profile("tabulated ξ must start at 0 and end at 1".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Profile("tabulated ξ must be strictly increasing".into()));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::Profile("tabulated D must be finite".into()));
        }
        let m = xs.len();
        let secants: Vec<f64> = (0..m - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        let mut slopes = vec![0.0; m];
        slopes[0] = secants[0];
        slopes[m - 1] = secants[m - 2];
        for i in 1..m - 1 {
            slopes[i] = if secants[i - 1] * secants[i] <= 0.0 {
                0.0
            } else {
                0.5 * (secants[i - 1] + secants[i])
            };
        }
        for i in 0..m - 1 {
            if secants[i] == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let a = slopes[i] / secants[i];
            let b = slopes[i + 1] / secants[i];
            let r = a * a + b * b;
            if r > 9.0 {
                let t = 3.0 / r.sqrt();
                slopes[i] = t * a * secants[i];
                slopes[i + 1] = t * b * secants[i];
            }
        }
        Ok(Self { xs, ys, slopes })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.xs[0], self.xs[self.xs.len() - 1]);
        let i = match self.xs.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

/// One-dimensional absorption problem on `[0, 1]`: diffusion coefficient,
/// constant drift and the mesh size used by the numerical oracles.
#[derive(Clone, Debug)]
pub struct Profile1D {
    pub diffusivity: Diffusivity,
    pub nu: f64,
    pub grid: usize,
}

impl Profile1D {
    pub fn new(diffusivity: Diffusivity) -> Self {
        Self {
            diffusivity,
            nu: 0.0,
            grid: DEFAULT_GRID,
        }
    }

    pub fn constant(d: f64) -> Self {
        Self::new(Diffusivity::Constant(d))
    }

    pub fn linear(c: f64) -> Self {
        Self::new(Diffusivity::Linear { c })
    }

    pub fn sinusoidal(c: f64) -> Self {
        Self::new(Diffusivity::Sinusoidal { c })
    }

    pub fn tabulated(xs: Vec<f64>, ds: Vec<f64>) -> Result<Self> {
        Ok(Self::new(Diffusivity::Tabulated(MonotoneCubic::new(xs, ds)?)))
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(Diffusivity::Custom(Arc::new(f)))
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    pub fn d(&self, x: f64) -> f64 {
        self.diffusivity.eval(x)
    }

    /// Checks the grid size, the drift, and `D ≥ D_MIN` on a dense sample.
    pub fn validate(&self) -> Result<()> {
        if self.grid < MIN_GRID {
            return Err(Error::Profile(format!("grid {} is below {MIN_GRID}", self.grid)));
        }
        if !self.nu.is_finite() {
            return Err(Error::Profile(format!("drift {} is not finite", self.nu)));
        }
        for i in 0..=VALIDATION_SAMPLES {
            let x = i as f64 / VALIDATION_SAMPLES as f64;
            let d = self.d(x);
            if !(d >= D_MIN) || !d.is_finite() {
                return Err(Error::Profile(format!("D({x}) = {d} is below {D_MIN:e}")));
            }
        }
        Ok(())
    }

    /// `D` as a field on the interval, in the form the diffusion engine takes.
    pub fn diffusion_fn(&self) -> ScalarFn {
        let d = self.diffusivity.clone();
        Arc::new(move |x: &[f64]| d.eval(x[0]))
    }
}

//! Text fixtures for density matrices and projector families.
//!
//! A fixture is a TOML document with a `dim` header and dense matrices given
//! as separate real and imaginary parts, row-major:
//!
//! ```toml
//! dim = 2
//!
//! [density]
//! re = [[0.5, 0.5], [0.5, 0.5]]
//! im = [[0.0, 0.0], [0.0, 0.0]]
//!
//! [[projectors]]
//! re = [[1.0, 0.0], [0.0, 0.0]]
//! im = [[0.0, 0.0], [0.0, 0.0]]
//! ```
//!
//! Floats are written in shortest round-trip form, so loading a saved
//! fixture reproduces every entry bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CMatrix, DensityMatrix, ProjectorFamily, C64};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixText {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixText {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let rows = |f: fn(&C64) -> f64| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect())
                .collect()
        };
        Self {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }

    pub fn to_matrix(&self, dim: usize) -> Result<CMatrix> {
        let shape_ok = |rows: &Vec<Vec<f64>>| rows.len() == dim && rows.iter().all(|r| r.len() == dim);
        if !shape_ok(&self.re) || !shape_ok(&self.im) {
            return Err(Error::Fixture(format!("matrix is not {dim}×{dim}")));
        }
        Ok(CMatrix::from_fn(dim, dim, |i, j| C64::new(self.re[i][j], self.im[i][j])))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<MatrixText>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub projectors: Vec<MatrixText>,
}

impl Fixture {
    pub fn new(density: Option<&DensityMatrix>, family: Option<&ProjectorFamily>) -> Result<Self> {
        let dim = density
            .map(|d| d.dim())
            .or(family.map(|f| f.dim()))
            .ok_or_else(|| Error::Fixture("fixture needs a density or a family".into()))?;
        if let (Some(d), Some(f)) = (density, family) {
            if d.dim() != f.dim() {
                return Err(Error::DimensionMismatch {
                    expected: f.dim(),
                    found: d.dim(),
                });
            }
        }
        Ok(Self {
            dim,
            density: density.map(|d| MatrixText::from_matrix(d.matrix())),
            projectors: family
                .map(|f| f.projectors().iter().map(MatrixText::from_matrix).collect())
                .unwrap_or_default(),
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let fixture: Self = toml::from_str(text).map_err(|e| Error::Fixture(e.to_string()))?;
        if fixture.dim == 0 {
            return Err(Error::Fixture("dim must be positive".into()));
        }
        Ok(fixture)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Fixture(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()?)
            .map_err(|e| Error::Fixture(format!("{}: {e}", path.display())))
    }

    pub fn density_matrix(&self) -> Result<DensityMatrix> {
        let d = self
            .density
            .as_ref()
            .ok_or_else(|| Error::Fixture("fixture has no density matrix".into()))?;
        DensityMatrix::new(d.to_matrix(self.dim)?)
    }

    pub fn family(&self) -> Result<ProjectorFamily> {
        if self.projectors.is_empty() {
            return Err(Error::Fixture("fixture has no projectors".into()));
        }
        let ps = self
            .projectors
            .iter()
            .map(|p| p.to_matrix(self.dim))
            .collect::<Result<Vec<_>>>()?;
        ProjectorFamily::new(ps)
    }
}

use thiserror::Error;

use crate::diffusion::TrajectoryRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("simplex dimension must be at least 2, got {0}")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("coordinates do not lie on the probability simplex: {reason} (p = {coords:?})")]
    OutOfSimplex { reason: String, coords: Vec<f64> },

    #[error("coordinate {0} is already frozen")]
    AlreadyFrozen(usize),

    #[error("coordinate {index} = {value} is not on its face (tolerance {tolerance})")]
    NotOnFace {
        index: usize,
        value: f64,
        tolerance: f64,
    },

    #[error("degenerate simplex state: {0}")]
    Degenerate(String),

    #[error("invalid diffusion spec: {0}")]
    Spec(String),

    #[error("trajectory did not terminate within {max_steps} steps")]
    NonTermination {
        max_steps: u64,
        partial: Box<TrajectoryRecord>,
    },

    #[error("trajectory {index} failed: {source}")]
    Ensemble {
        index: u64,
        completed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("projector algebra violated: {0}")]
    ProjectorAlgebra(String),

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("invalid reduction increment: {0}")]
    InvalidIncrement(String),

    #[error("collapse onto block {0} with zero probability")]
    ZeroProbabilityCollapse(usize),

    #[error("state is not decohered: trace norm of the off-diagonal residual is {norm:e} (threshold {threshold:e})")]
    NotDecohered { norm: f64, threshold: f64 },

    #[error("value {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("invalid diffusion profile: {0}")]
    Profile(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("series not converged: residual {residual:e} exceeds tolerance {tolerance:e}")]
    SeriesNotConverged { residual: f64, tolerance: f64 },

    #[error("fixture parse error: {0}")]
    Fixture(String),

    #[error("invalid ensemble configuration: {0}")]
    Config(String),
}

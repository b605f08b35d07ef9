use num_complex::Complex64;
use thiserror::Error;

use crate::numerics::QuadError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("a star network needs at least two branches, got {0}")]
    TooFewBranches(usize),
    #[error("wave speed c[{branch}] = {value} is not positive")]
    NonPositiveSpeed { branch: usize, value: f64 },
    #[error("potentials are not sorted ascending: a[{branch}] < a[{}]", branch - 1)]
    UnsortedPotentials { branch: usize },
    #[error("expected {expected} per-branch entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("network parameters must be finite")]
    NonFiniteParameter,
    #[error("function has neither compact support nor a decay radius")]
    NonIntegrable,
    #[error("function is not compactly supported")]
    NonCompactSupport,
    #[error("function carries no second-derivative rule")]
    MissingDerivativeRule,
    #[error("lambda = {lambda} sits on the threshold a[{branch}]")]
    ThresholdSingularity { branch: usize, lambda: Complex64 },
    #[error("Wronskian vanishes at lambda = {0}")]
    WronskianZero(Complex64),
    #[error("lambda = {0} lies in the spectrum [a_1, inf); use the spectral measure for boundary values")]
    SpectrumPoint(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("sampling matrix D is singular (|det D| = {0:e})")]
    SingularD(f64),
    #[error("band ({lo}, {hi}) with branch {branch} is not inside a spectral gap of that branch")]
    BandOutsideGap { lo: f64, hi: f64, branch: usize },
    #[error("decay profile amplitude {0:e} is below the fit floor")]
    AmplitudeUnderflow(f64),
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("linear system is singular")]
    SingularSystem,
    #[error("wave reaches x = {reach} but the truncated star ends at L = {length}")]
    BoundaryContamination { reach: f64, length: f64 },
    #[error("initial data violates the vertex conditions (T0 defect {t0:e}, T1 defect {t1:e})")]
    NonConformingInitialData { t0: f64, t1: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("degenerate triangle {index} (signed area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("parameter y[{index}] = {value} lies outside [-1/2, 1/2]")]
    ParameterOutOfRange { index: usize, value: f64 },
    #[error("parameter dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),
    #[error("coefficient gradient unavailable (a(y) is not in W^1,inf)")]
    MissingGradient,
    #[error("stiffness matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("linear solve inaccurate: relative residual {0:e}")]
    SolverAccuracy(f64),
    #[error("field was computed on a different mesh")]
    MeshMismatch,
    #[error("the L2 residual estimators require a convex domain")]
    UnsupportedDomain,
    #[error("expected {expected} values, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("lattice level m = {m} is not available (max {max})")]
    LevelUnavailable { m: u32, max: u32 },
    #[error("covariance matrix is not symmetric positive definite")]
    CovarianceNotSpd,
    #[error("estimator variants of zeta and zeta' differ")]
    VariantMismatch,
    #[error("nonpositive denominator in ratio")]
    NonPositiveDenominator,
    #[error("sample budget must be positive")]
    EmptySampleBudget,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

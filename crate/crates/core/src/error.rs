use thiserror::Error;

#[derive(Debug, Error)]
pub enum KhsError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in field")]
    NonFinite,
    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("gauge violates the curl constraint (residual {residual:e})")]
    CurlViolation { residual: f64 },
    #[error("matrix is not Hermitian (residual {residual:e})")]
    NonHermitian { residual: f64 },
    #[error("gradient check failed (relative error {rel:e})")]
    GradientMismatch { rel: f64 },
    #[error("Hamiltonian is not homogeneous quadratic")]
    NonQuadratic,
    #[error("coupling vector vanishes; use the uncoupled path")]
    DegenerateCoupling,
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),
    #[error("grid does not resolve the state: {0}")]
    Unresolved(String),
    #[error("Hamiltonian outside the scalar-plus-single-coupling family")]
    NotSingleCoupling,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KhsError>;

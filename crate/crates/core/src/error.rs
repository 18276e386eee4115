use thiserror::Error;

/// Errors raised by grid construction, symbol evaluation and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field is in the {found} domain, expected {expected}")]
    WrongDomain {
        expected: &'static str,
        found: &'static str,
    },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("symbol singularity: 1 + L0(xi) vanishes at xi = {xi:?}")]
    SymbolSingularity { xi: Vec<f64> },

    #[error("symbols violate the admissibility conditions ({hypothesis}) at xi = {xi:?}")]
    InadmissibleSymbols { hypothesis: String, xi: Vec<f64> },

    #[error("kernels violate the nonlocal invertibility inequality: margin = {margin:.6e}")]
    InadmissibleKernels { margin: f64 },

    #[error("kernel horizons differ: {0} vs {1}")]
    HorizonMismatch(f64, f64),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("near-singular determinant |D| = {min_abs:.3e} at xi = {xi:?}")]
    SingularDeterminant { min_abs: f64, xi: Vec<f64> },

    #[error("hyperbolic growth: |Im(sqrt(Q) t)| = {im:.3e} exceeds guard at mode {mode}, t = {t}")]
    HyperbolicGrowth { mode: usize, t: f64, im: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("Picard iteration failed to contract: {0}")]
    NonContraction(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

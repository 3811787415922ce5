use thiserror::Error;

/// Errors produced by the estimation, signal and harness routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate sample: variance estimate is zero")]
    DegenerateSample,
    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("unsupported distribution: {0}")]
    UnsupportedDistribution(String),
    #[error("moment order {requested} unavailable (have up to {available})")]
    OrderUnavailable { requested: usize, available: usize },
    #[error("invalid cumulant set: {0}")]
    InvalidCumulants(String),
    #[error("invalid moment vector: {0}")]
    InvalidMoments(String),
    #[error("degenerate correlant matrix: det {det:e} <= tolerance {tolerance:e}")]
    DegenerateCorrelantMatrix { det: f64, tolerance: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} outside the lag window (memory {memory})")]
    IndexOutOfWindow { index: usize, memory: usize },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid shape coefficients: {0}")]
    InvalidShape(String),
    #[error("asymmetry detected: |gamma3| = {gamma3} exceeds the symmetry threshold")]
    AsymmetryDetected { gamma3: f64 },
    #[error("objective is not finite")]
    NonFiniteObjective,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("signal too short: need {needed} samples, got {got}")]
    SignalTooShort { needed: usize, got: usize },
    #[error("singular normal equations (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },
    #[error("invalid signal spec: {0}")]
    InvalidSpec(String),
    #[error("pre- and post-change regimes are indistinguishable")]
    IndistinguishableRegimes,
    #[error("drift condition violated: pre-change score mean {mean} is not negative")]
    DriftViolation { mean: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error after {rows} rows: {message}")]
    Parse { rows: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

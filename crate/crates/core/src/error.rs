use thiserror::Error;

/// Errors produced by the redatuming pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("unknown wavespeed model `{0}`")]
    UnknownModel(String),

    #[error("wavespeed must be positive and finite, found {value} at node ({ix}, {iy})")]
    InvalidWavespeed { value: f64, ix: usize, iy: usize },

    #[error("time step {dt} violates the stability limit {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("time {t} lies outside [0, {t_end}]")]
    TimeOutOfRange { t: f64, t_end: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("shift {shift} is not a multiple of the sample interval {dt}")]
    MisalignedShift { shift: f64, dt: f64 },

    #[error("signal covers [0, {have}] but [0, {need}] is required")]
    SignalTooShort { have: f64, need: f64 },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("solver stopped after {iterations} iterations at relative residual {residual:.3e}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("source is not supported where it must be: {0}")]
    Support(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

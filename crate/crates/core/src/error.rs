use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("conjugate search radius {radius} too small: supremum not attained in the interior")]
    RadiusTooSmall { radius: f64 },

    #[error("integrand is not differentiable here ({0}); use a subgradient or the finite-difference fallback")]
    Nonsmooth(String),

    #[error("point outside the realized window: {0}")]
    Window(String),

    #[error("numerical failure: {message}")]
    Numerical { message: String, iterate: Vec<f64> },

    #[error("table coverage: {0}")]
    TableCoverage(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

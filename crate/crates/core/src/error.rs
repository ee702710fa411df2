use thiserror::Error;

/// Errors raised by every engine in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("quadrature did not converge after {subdivisions} subdivisions on [{lo}, {hi}]")]
    NonConvergence {
        lo: f64,
        hi: f64,
        subdivisions: usize,
    },

    #[error("time {t} is outside the trajectory domain [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },

    #[error("unsupported trajectory variant for {0}")]
    UnsupportedVariant(&'static str),

    #[error("fitness variance is negative ({value:e}) at t = {t}")]
    NegativeVariance { t: f64, value: f64 },

    #[error("skewness undefined: zero fitness variance at t = {t}")]
    ZeroVariance { t: f64 },

    #[error("step-size failure at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("stability condition violated: {0}")]
    Cfl(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{engine} engine failed: {source}")]
    Engine {
        engine: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_engine(self, engine: &'static str) -> Self {
        Error::Engine {
            engine,
            source: Box::new(self),
        }
    }
}

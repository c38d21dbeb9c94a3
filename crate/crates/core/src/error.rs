use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("time {t} outside kernel grid [0, {t_max}]")]
    OutOfRange { t: f64, t_max: f64 },

    #[error("integration diverged in sector {sector} at t = {t}")]
    Divergence { sector: String, t: f64 },

    #[error("no steady state: Bloch matrix singular in sector m = {m}")]
    NoSteadyState { m: i32 },

    #[error("no root of t*f(t) = pi/2 in [0, {upper}]")]
    NoRoot { upper: f64 },

    #[error("exact propagation: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures that come from the numerics rather than the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature(_)
                | Error::OutOfRange { .. }
                | Error::Divergence { .. }
                | Error::NoSteadyState { .. }
                | Error::NoRoot { .. }
                | Error::Oracle(_)
        )
    }
}

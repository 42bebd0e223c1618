use thiserror::Error;

/// Errors produced by the numerical and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("operation requires a nonempty time set")]
    EmptySet,

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("event budget exceeded: need {needed}, limit {limit}")]
    Budget { needed: u64, limit: u64 },

    #[error("quadrature failed on [{lo}, {hi}]: estimated error {error:.3e} after {evaluations} evaluations")]
    Quadrature {
        lo: f64,
        hi: f64,
        error: f64,
        evaluations: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("p must lie in (0, 1), got {p}")))
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("time must be finite and >= 0, got {t}")))
    }
}

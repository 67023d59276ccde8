use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("field length {found} does not match grid size {expected}")]
    GridMismatch { expected: usize, found: usize },

    #[error("inadmissible potential: density {value:.3e} at y = {y:.6}")]
    Inadmissible { y: f64, value: f64 },

    #[error("stiff failure at t = {t:.6e} with dt = {dt:.3e}: {reason}")]
    StiffFailure { t: f64, dt: f64, reason: String },

    #[error("renormalization unavailable: {0}")]
    RenormalizationUnavailable(String),

    #[error("fit unavailable: {0}")]
    FitUnavailable(String),

    #[error("eigensolver failure (condition estimate {condition:.3e}): {reason}")]
    Eigen { condition: f64, reason: String },

    #[error("path point s = {s} is inadmissible")]
    PathInadmissible { s: f64 },

    #[error("newton diverged at t = {t}; last accepted t = {last_good_t}, residual {residual:.3e}")]
    NewtonDivergence {
        t: f64,
        last_good_t: f64,
        residual: f64,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

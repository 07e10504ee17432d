use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid exponents: {0}")]
    InvalidExponents(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate gradient |phi_r| = {phi_r:e} at r = {r}")]
    DegenerateGradient { r: f64, phi_r: f64 },
    #[error("positivity violation: {0}")]
    Positivity(String),
    #[error("regime error: {0}")]
    Regime(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("constant selection failed: {0}")]
    Selection(String),
    #[error("blow-up at t = {t}: value {value:e} exceeds {limit:e}")]
    BlowUp { t: f64, value: f64, limit: f64 },
    #[error("time step {dt:e} underflowed at t = {t}")]
    NonConvergence { t: f64, dt: f64 },
    #[error("test function support violation: {0}")]
    SupportViolation(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("dead point: u(x0,t0) = {value:e} is below the positivity floor {floor:e}")]
    DeadPoint { value: f64, floor: f64 },
    #[error("chain left the domain: {0}")]
    Room(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("no extinction: v(T_max) = {v_end:e} > floor {floor:e} (T_max = {t_max})")]
    NoExtinction { v_end: f64, floor: f64, t_max: f64 },
    #[error("exponent error: {0}")]
    Exponent(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

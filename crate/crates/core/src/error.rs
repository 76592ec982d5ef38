use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported derivative order {order} (max {max})")]
    UnsupportedOrder { order: usize, max: usize },
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("bracketing failure: {0}")]
    Bracketing(String),
    #[error("non-convergence: {0}")]
    NonConvergence(String),
    #[error("regime error: {0}")]
    Regime(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("solver breakdown: {0}")]
    SolverBreakdown(String),
    #[error("path left the envelope |x| <= {envelope} at t = {time}")]
    BlowUp { envelope: f64, time: f64 },
    #[error("insufficient horizon: need {needed}, have {available}")]
    InsufficientHorizon { needed: f64, available: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::Regime(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

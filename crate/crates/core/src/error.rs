use thiserror::Error;

/// Errors produced by grid/tree construction and the solvers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("time {t} is not a grid point")]
    OffGrid { t: f64 },

    #[error("intensity too large on step {step}: gamma*dt = {prob} >= 1")]
    IntensityTooLarge { step: usize, prob: f64 },

    #[error("invalid intensity: {0}")]
    InvalidIntensity(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid regulated path: {0}")]
    InvalidPath(String),

    #[error("decreasing finite-variation input at index {index}")]
    DecreasingInput { index: usize },

    #[error("invalid driver: {0}")]
    InvalidDriver(String),

    #[error(
        "backward step is not a contraction: mu*dt = {mu_dt} >= 1; at least {required_n} steps needed"
    )]
    NonContraction { mu_dt: f64, required_n: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("stopping rule mismatch: {0}")]
    StoppingRule(String),

    #[error("tree too large for exhaustive enumeration: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;

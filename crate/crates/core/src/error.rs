use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("regime index {index} out of range (model has {count} regimes)")]
    RegimeIndex { index: usize, count: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid alignment error: {0}")]
    Alignment(String),

    #[error("invalid model parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    #[error("relative value iteration did not converge after {sweeps} sweeps (last residual {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("stationary distribution unavailable: {0}")]
    NumericalRank(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("simulation config error: {0}")]
    SimConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

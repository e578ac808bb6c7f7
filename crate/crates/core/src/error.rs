//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FusionError>;

#[derive(Debug, Clone, Error)]
pub enum FusionError {
    /// A constructor or operation received a value outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Bayes update with zero normalizer: the realized observation has zero
    /// likelihood mass under the prior.
    #[error("degenerate belief update: observation index {observation} has zero probability under the prior (p_high = {p_high})")]
    DegenerateUpdate { observation: u8, p_high: f64 },

    /// Public-belief update conditioned on an action the current regime
    /// assigns probability zero.
    #[error("undefined posterior: action index {action} has probability zero in the {regime} regime")]
    ImpossibleAction { action: u8, regime: &'static str },

    /// Value iteration ran out of sweeps.
    #[error("value iteration did not converge within {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A simulated trace violated an internal consistency invariant.
    #[error("simulation invariant violated: {0}")]
    InvariantViolation(String),
}

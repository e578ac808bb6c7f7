//! Controlled information fusion over a network of risk-averse social sensors.
//!
//! A two-state quality is observed indirectly through the binary actions of a
//! sequence of sensors. Each sensor fuses the public belief with a private
//! noisy observation, then utilizes the offered service only if the CVaR of
//! doing so beats opting out. A price-setting controller steers this process:
//! its price decides whether sensors reveal their observations (social
//! learning), all utilize regardless (herding), or none do (cut-off).
//!
//! The crate is organized around that loop:
//!
//! - [`sensor`] — observation model, private belief update, CVaR evaluation,
//!   the closed-form prices at which sensors switch behaviour.
//! - [`filter`] — price-regime classification and the public-belief filter
//!   driven by observed actions.
//! - [`solver`] — belief-grid dynamic programming for the controller: value
//!   iteration over a finite price menu, policy and threshold extraction, and
//!   a dense-price brute-force oracle.
//! - [`sim`] — seeded Monte Carlo simulation of the closed loop and analytic
//!   martingale checks on the solved policy.
//! - [`verify`] — the self-contained verification battery (independent CVaR
//!   oracle, menu sufficiency, value shape, policy structure, martingales).
//!
//! Grid sweeps and trace ensembles run data-parallel under the default
//! `parallel` feature and fall back to sequential loops without it; results
//! are bit-identical either way.

pub mod error;
mod exec;
pub mod filter;
pub mod sensor;
pub mod sim;
pub mod solver;
pub mod verify;

pub use error::{FusionError, Result};
pub use filter::{
    action_probability, belief_transition, blackwell_check, regime_of_price, ActionLikelihood,
    PriceRegime,
};
pub use sensor::{
    cvar, price_thresholds, private_belief_update, sensor_action, Action, Belief, CostTable,
    Observation, ObservationModel, PriceThresholds, RiskAversion, State,
};
pub use solver::{
    dense_price_oracle, extract_thresholds, instantaneous_reward, q_value, value_iteration,
    BeliefGrid, ControllerParams, Policy, PolicyEntry, PriceChoice, RewardCase, Solution,
    Thresholds, ValueFunction,
};
pub use sim::{
    belief_martingale_check, ensemble_stats, expected_next_price, run_ensemble, simulate_trace,
    supermartingale_check, EnsembleSummary, Trace, TraceStep,
};

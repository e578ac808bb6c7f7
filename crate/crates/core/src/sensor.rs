//! Sensor-side mathematics.
//!
//! A sensor holds the public belief over the two-state quality, observes a
//! private binary signal, and updates by Bayes' rule:
//!
//! ```text
//!     eta_y = B_y pi / (1' B_y pi)
//! ```
//!
//! where `B_y` is the diagonal of column `y` of the observation matrix. It
//! then utilizes the service at price `u` iff the CVaR of the utilize cost
//! `(u, u - 1)` under `eta_y` is at most zero, which reduces to the closed
//! threshold test `u <= 1 - eta_y(low) / alpha`. Ties resolve to utilizing.
//!
//! State, observation and action labels map to indices as: label 1 (Low /
//! Don't Utilize) -> index 0, label 2 (High / Utilize) -> index 1. The same
//! encoding is used in every module and file format.

use crate::error::{FusionError, Result};

/// Tolerance for row-stochasticity and the TP2 determinant test.
pub const MATRIX_TOL: f64 = 1e-12;

/// Quality of the service; drawn once per run, never redrawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum State {
    Low = 0,
    High = 1,
}

/// A sensor's private noisy measurement of the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    Low = 0,
    High = 1,
}

/// A sensor's public decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    DontUtilize = 0,
    Utilize = 1,
}

impl State {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl Observation {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Observation::Low),
            1 => Ok(Observation::High),
            _ => Err(FusionError::InvalidParameter(format!(
                "observation index must be 0 or 1, got {i}"
            ))),
        }
    }
}

impl Action {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Action::DontUtilize),
            1 => Ok(Action::Utilize),
            _ => Err(FusionError::InvalidParameter(format!(
                "action index must be 0 or 1, got {i}"
            ))),
        }
    }
}

/// Point on the 2-simplex, stored as the probability of the High state.
///
/// The component view is `(p_low, p_high) = (1 - p_high, p_high)`, which sums
/// to one by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Belief {
    p_high: f64,
}

impl Belief {
    pub fn new(p_high: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_high) {
            return Err(FusionError::InvalidParameter(format!(
                "belief p_high must lie in [0, 1], got {p_high}"
            )));
        }
        Ok(Belief { p_high })
    }

    /// Internal constructor for ratios already normalized by an update.
    pub(crate) fn from_normalized(p_high: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&p_high), "ratio out of range: {p_high}");
        Belief { p_high }
    }

    pub fn p_high(self) -> f64 {
        self.p_high
    }

    pub fn p_low(self) -> f64 {
        1.0 - self.p_high
    }

    /// Probability of the given state.
    pub fn prob(self, state: State) -> f64 {
        match state {
            State::Low => self.p_low(),
            State::High => self.p_high,
        }
    }
}

/// Row-stochastic 2x2 observation matrix, `b[i][j] = P(y = j | x = i)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservationModel {
    rows: [[f64; 2]; 2],
}

impl ObservationModel {
    pub fn new(rows: [[f64; 2]; 2]) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(FusionError::InvalidParameter(format!(
                        "observation matrix entry [{i}][{j}] must lie in [0, 1], got {v}"
                    )));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > MATRIX_TOL {
                return Err(FusionError::InvalidParameter(format!(
                    "observation matrix row {i} must sum to 1, got {sum}"
                )));
            }
        }
        Ok(ObservationModel { rows })
    }

    pub fn likelihood(&self, state: State, obs: Observation) -> f64 {
        self.rows[state.index()][obs.index()]
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        self.rows
    }

    pub fn determinant(&self) -> f64 {
        self.rows[0][0] * self.rows[1][1] - self.rows[0][1] * self.rows[1][0]
    }

    /// Total positivity of order 2: non-negative determinant, with a small
    /// allowance for construction rounding.
    pub fn is_tp2(&self) -> bool {
        self.determinant() >= -MATRIX_TOL
    }
}

/// Degree of risk aversion in `(0, 1]`; `alpha = 1` is risk-neutral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskAversion {
    alpha: f64,
}

impl RiskAversion {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(FusionError::InvalidParameter(format!(
                "risk aversion alpha must lie in (0, 1], got {alpha}"
            )));
        }
        Ok(RiskAversion { alpha })
    }

    pub fn value(self) -> f64 {
        self.alpha
    }

    pub fn is_risk_neutral(self) -> bool {
        self.alpha == 1.0
    }
}

/// State-action cost table at a given price: opting out costs nothing,
/// utilizing costs the price minus the state valuation (0 for Low, 1 for
/// High).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostTable {
    price: f64,
}

impl CostTable {
    pub fn new(price: f64) -> Self {
        CostTable { price }
    }

    pub fn cost(&self, state: State, action: Action) -> f64 {
        match action {
            Action::DontUtilize => 0.0,
            Action::Utilize => match state {
                State::Low => self.price,
                State::High => self.price - 1.0,
            },
        }
    }

    /// Per-state cost of utilizing, indexed `[Low, High]`.
    pub fn utilize_costs(&self) -> [f64; 2] {
        [self.price, self.price - 1.0]
    }
}

/// The pair of prices at which the low- and high-observation sensors are
/// exactly indifferent to utilizing.
///
/// `u_low <= u_high` always (the private belief is monotone in the
/// observation under TP2). Values are not clamped to `[0, 1]`; a negative
/// threshold means no feasible price induces that behaviour.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriceThresholds {
    pub u_low: f64,
    pub u_high: f64,
}

/// Bayes update of the prior with a private observation.
pub fn private_belief_update(
    prior: Belief,
    model: &ObservationModel,
    obs: Observation,
) -> Result<Belief> {
    let num_low = model.likelihood(State::Low, obs) * prior.p_low();
    let num_high = model.likelihood(State::High, obs) * prior.p_high();
    let norm = num_low + num_high;
    if norm <= 0.0 {
        return Err(FusionError::DegenerateUpdate {
            observation: obs.index() as u8,
            p_high: prior.p_high(),
        });
    }
    Ok(Belief::from_normalized(num_high / norm))
}

/// CVaR of a two-point cost distribution: `costs[i]` is incurred with the
/// probability `dist` assigns to state index `i`.
///
/// Closed form of the Rockafellar-Uryasev program
/// `min_z { z + E[max(c - z, 0)] / alpha }`: the expected cost over the worst
/// `alpha`-fraction of outcomes. Reduces to the plain expectation at
/// `alpha = 1`.
pub fn cvar(costs: [f64; 2], dist: Belief, alpha: RiskAversion) -> f64 {
    let a = alpha.value();
    let probs = [dist.p_low(), dist.p_high()];
    let (max_idx, min_idx) = if costs[0] >= costs[1] { (0, 1) } else { (1, 0) };
    let p_max = probs[max_idx];
    if p_max >= a {
        costs[max_idx]
    } else {
        (p_max * costs[max_idx] + (a - p_max) * costs[min_idx]) / a
    }
}

/// The indifference prices at a prior: `u_high` for the high-observation
/// sensor, `u_low` for the low-observation sensor.
pub fn price_thresholds(
    prior: Belief,
    model: &ObservationModel,
    alpha: RiskAversion,
) -> Result<PriceThresholds> {
    let post_low = private_belief_update(prior, model, Observation::Low)?;
    let post_high = private_belief_update(prior, model, Observation::High)?;
    Ok(PriceThresholds {
        u_low: 1.0 - post_low.p_low() / alpha.value(),
        u_high: 1.0 - post_high.p_low() / alpha.value(),
    })
}

/// The sensor's myopic CVaR-optimal action after observing `obs` at price
/// `price`. Utilizes iff the price is at or below the private indifference
/// threshold; the tie goes to utilizing.
pub fn sensor_action(
    prior: Belief,
    model: &ObservationModel,
    obs: Observation,
    alpha: RiskAversion,
    price: f64,
) -> Result<Action> {
    let post = private_belief_update(prior, model, obs)?;
    let threshold = 1.0 - post.p_low() / alpha.value();
    Ok(if price <= threshold {
        Action::Utilize
    } else {
        Action::DontUtilize
    })
}

//! Controller-side dynamic programming on a belief grid.
//!
//! At every belief the continuum of prices collapses to a finite menu: the
//! herding price `u_low`, the social-learning price `u_high`, and any cut-off
//! price above `u_high` (stored as `u_high + epsilon`). Value iteration
//! therefore maximizes over at most three candidates per grid point:
//!
//! ```text
//!     cut-off       q = 0
//!     high price    q = (u_high - beta) * sigma_high + rho * EV      (self-interested)
//!                   q = (u_high - beta) + rho * EV                   (altruistic)
//!     low price     q = (u_low - beta) / (1 - rho)                   (self-interested only)
//! ```
//!
//! `EV` is the one-step expected continuation under the social-learning
//! filter, evaluated by linear interpolation of the previous sweep's values
//! (Jacobi updates, so parallel and sequential sweeps agree bitwise). The low
//! price freezes the belief, so its self-referential branch is folded to its
//! fixed point `(u_low - beta) / (1 - rho)` instead of lagging one sweep.
//!
//! Menu feasibility follows the `[0, 1]` price normalization: a point with
//! `u_high < 0` can only cut off, and a negative `u_low` drops the herding
//! entry. The recorded cut-off price `min(u_high + epsilon, 1)` is a label --
//! no transaction happens in that regime -- and may sit below zero at
//! strongly risk-averse beliefs.

use serde::Serialize;

use crate::error::{FusionError, Result};
use crate::exec::map_indices;
use crate::filter::{regime_of_price, PriceRegime};
use crate::sensor::{
    price_thresholds, private_belief_update, Belief, Observation, ObservationModel, RiskAversion,
};

/// What the controller is paid for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardCase {
    /// Paid `u - beta` whenever a sensor utilizes.
    SelfInterested,
    /// Paid `u - beta` when the action reveals the private observation.
    Altruistic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerParams {
    beta: f64,
    rho: f64,
    reward_case: RewardCase,
    epsilon: f64,
}

impl ControllerParams {
    pub fn new(beta: f64, rho: f64, reward_case: RewardCase, epsilon: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(FusionError::InvalidParameter(format!(
                "service cost beta must lie in (0, 1), got {beta}"
            )));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(FusionError::InvalidParameter(format!(
                "discount factor rho must lie in [0, 1), got {rho}"
            )));
        }
        if epsilon <= 0.0 {
            return Err(FusionError::InvalidParameter(format!(
                "cut-off offset epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(ControllerParams {
            beta,
            rho,
            reward_case,
            epsilon,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn reward_case(&self) -> RewardCase {
        self.reward_case
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Uniform discretization of the belief simplex by `p_high`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefGrid {
    points: Vec<f64>,
}

impl BeliefGrid {
    pub fn uniform(n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(FusionError::InvalidParameter(format!(
                "belief grid needs at least 2 points, got {n_points}"
            )));
        }
        let last = (n_points - 1) as f64;
        Ok(BeliefGrid {
            points: (0..n_points).map(|i| i as f64 / last).collect(),
        })
    }

    /// Rebuild from explicit points, checking the uniform-grid invariants.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(FusionError::InvalidParameter(
                "belief grid needs at least 2 points".into(),
            ));
        }
        if points[0] != 0.0 || points[n - 1] != 1.0 {
            return Err(FusionError::InvalidParameter(
                "belief grid must span [0, 1] inclusive".into(),
            ));
        }
        let step = 1.0 / (n - 1) as f64;
        for (i, &p) in points.iter().enumerate() {
            if (p - i as f64 * step).abs() > 1e-12 {
                return Err(FusionError::InvalidParameter(format!(
                    "belief grid spacing is not uniform at index {i}"
                )));
            }
        }
        Ok(BeliefGrid { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        1.0 / (self.points.len() - 1) as f64
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    /// Index of the nearest grid point.
    pub fn snap_index(&self, p_high: f64) -> usize {
        let last = (self.points.len() - 1) as f64;
        let idx = (p_high.clamp(0.0, 1.0) * last).round() as usize;
        idx.min(self.points.len() - 1)
    }

    /// Lower interpolation index and fractional weight for `p_high`.
    fn interp_anchor(&self, p_high: f64) -> (usize, f64) {
        let last = (self.points.len() - 1) as f64;
        let pos = p_high.clamp(0.0, 1.0) * last;
        let j = (pos.floor() as usize).min(self.points.len() - 2);
        (j, pos - j as f64)
    }
}

/// Grid-sampled value function with linear interpolation between points.
#[derive(Clone, Debug)]
pub struct ValueFunction {
    grid: BeliefGrid,
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(grid: BeliefGrid, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(FusionError::InvalidParameter(format!(
                "value function needs one value per grid point ({} points, {} values)",
                grid.len(),
                values.len()
            )));
        }
        Ok(ValueFunction { grid, values })
    }

    pub fn zero(grid: BeliefGrid) -> Self {
        let values = vec![0.0; grid.len()];
        ValueFunction { grid, values }
    }

    pub fn grid(&self) -> &BeliefGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn evaluate(&self, p_high: f64) -> f64 {
        let (j, w) = self.grid.interp_anchor(p_high);
        (1.0 - w) * self.values[j] + w * self.values[j + 1]
    }
}

/// Which menu entry the policy picks at a grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriceChoice {
    CutOffPrice,
    HighPrice,
    LowPrice,
}

impl PriceChoice {
    pub fn label(self) -> &'static str {
        match self {
            PriceChoice::CutOffPrice => "CutOffPrice",
            PriceChoice::HighPrice => "HighPrice",
            PriceChoice::LowPrice => "LowPrice",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "CutOffPrice" => Ok(PriceChoice::CutOffPrice),
            "HighPrice" => Ok(PriceChoice::HighPrice),
            "LowPrice" => Ok(PriceChoice::LowPrice),
            other => Err(FusionError::InvalidParameter(format!(
                "unknown price choice label '{other}'"
            ))),
        }
    }

    /// Position in the structural ordering cut-off -> high -> low.
    pub fn rank(self) -> u8 {
        match self {
            PriceChoice::CutOffPrice => 0,
            PriceChoice::HighPrice => 1,
            PriceChoice::LowPrice => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyEntry {
    pub choice: PriceChoice,
    pub price: f64,
}

/// Grid-indexed pricing policy.
#[derive(Clone, Debug)]
pub struct Policy {
    grid: BeliefGrid,
    entries: Vec<PolicyEntry>,
}

impl Policy {
    pub fn new(grid: BeliefGrid, entries: Vec<PolicyEntry>) -> Result<Self> {
        if grid.len() != entries.len() {
            return Err(FusionError::InvalidParameter(format!(
                "policy needs one entry per grid point ({} points, {} entries)",
                grid.len(),
                entries.len()
            )));
        }
        Ok(Policy { grid, entries })
    }

    pub fn grid(&self) -> &BeliefGrid {
        &self.grid
    }

    pub fn entries(&self) -> &[PolicyEntry] {
        &self.entries
    }

    /// Entry at the nearest grid point.
    pub fn entry_at(&self, p_high: f64) -> PolicyEntry {
        self.entries[self.grid.snap_index(p_high)]
    }
}

/// Belief thresholds read off a solved instance. `None` marks an empty
/// region on the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Thresholds {
    /// First belief where the policy leaves the cut-off region.
    pub pi_star: Option<f64>,
    /// First belief where herding (the low price) is optimal.
    pub pi_double_star: Option<f64>,
    /// First belief where the high price is optimal.
    pub pi_hat_star: Option<f64>,
    /// First belief where the high price is feasible (`u_high >= 0`).
    pub delta_star: Option<f64>,
    /// First belief where the high-price branch value crosses zero.
    pub gamma_star: Option<f64>,
}

/// Converged solver output.
#[derive(Clone, Debug)]
pub struct Solution {
    pub value: ValueFunction,
    pub policy: Policy,
    pub iterations: usize,
    pub residual: f64,
}

/// Per-belief quantities every branch formula is built from.
#[derive(Clone, Copy, Debug)]
struct PointGeometry {
    u_low: f64,
    u_high: f64,
    /// P(action = don't utilize) and P(action = utilize) in the
    /// social-learning regime; equal to the observation marginals.
    sigma_low: f64,
    sigma_high: f64,
    /// Posterior `p_high` after a low / high observation.
    post_low: f64,
    post_high: f64,
}

fn point_geometry(
    belief: Belief,
    model: &ObservationModel,
    alpha: RiskAversion,
) -> Result<PointGeometry> {
    let t = price_thresholds(belief, model, alpha)?;
    let eta_low = private_belief_update(belief, model, Observation::Low)?;
    let eta_high = private_belief_update(belief, model, Observation::High)?;
    let rows = model.rows();
    let sigma_low = rows[0][0] * belief.p_low() + rows[1][0] * belief.p_high();
    let sigma_high = rows[0][1] * belief.p_low() + rows[1][1] * belief.p_high();
    Ok(PointGeometry {
        u_low: t.u_low,
        u_high: t.u_high,
        sigma_low,
        sigma_high,
        post_low: eta_low.p_high(),
        post_high: eta_high.p_high(),
    })
}

impl PointGeometry {
    fn expected_continuation(&self, value: &ValueFunction) -> f64 {
        self.sigma_low * value.evaluate(self.post_low)
            + self.sigma_high * value.evaluate(self.post_high)
    }

    /// Candidate list in tie order (cut-off, high, low); `None` where the
    /// menu entry is infeasible.
    fn candidates(&self, ev: f64, params: &ControllerParams) -> [Option<(PriceChoice, f64, f64)>; 3] {
        let mut out = [None, None, None];
        if self.u_high < 1.0 {
            let price = (self.u_high + params.epsilon).min(1.0);
            out[0] = Some((PriceChoice::CutOffPrice, price, 0.0));
        }
        // The high-price branch needs a non-empty social-learning interval;
        // the pure-high corner u_low = u_high = 1 is the continuity limit of
        // that interval and keeps the branch.
        if self.u_high >= 0.0 && (self.u_high > self.u_low || self.u_high == 1.0) {
            let q = match params.reward_case {
                RewardCase::SelfInterested => {
                    (self.u_high - params.beta) * self.sigma_high + params.rho * ev
                }
                RewardCase::Altruistic => (self.u_high - params.beta) + params.rho * ev,
            };
            out[1] = Some((PriceChoice::HighPrice, self.u_high, q));
        }
        if params.reward_case == RewardCase::SelfInterested && self.u_low >= 0.0 {
            let q = (self.u_low - params.beta) / (1.0 - params.rho);
            out[2] = Some((PriceChoice::LowPrice, self.u_low, q));
        }
        out
    }

    /// Menu argmax; later entries win ties so the herding region is closed
    /// on the left.
    fn best(&self, ev: f64, params: &ControllerParams) -> (PriceChoice, f64, f64) {
        let mut best: Option<(PriceChoice, f64, f64)> = None;
        for cand in self.candidates(ev, params).into_iter().flatten() {
            best = match best {
                Some(b) if cand.2 < b.2 => Some(b),
                _ => Some(cand),
            };
        }
        best.expect("price menu is never empty")
    }
}

/// Expected instantaneous controller reward at a price.
pub fn instantaneous_reward(
    prior: Belief,
    model: &ObservationModel,
    alpha: RiskAversion,
    params: &ControllerParams,
    price: f64,
) -> Result<f64> {
    let regime = regime_of_price(prior, model, alpha, price)?;
    let margin = price - params.beta();
    Ok(match (params.reward_case(), regime) {
        (RewardCase::SelfInterested, PriceRegime::Herding) => margin,
        (RewardCase::SelfInterested, PriceRegime::SocialLearning) => {
            let geom = point_geometry(prior, model, alpha)?;
            margin * geom.sigma_high
        }
        (RewardCase::Altruistic, PriceRegime::SocialLearning) => margin,
        _ => 0.0,
    })
}

/// One-step lookahead value of charging `price` at `prior`, per the
/// branch closed forms. The cut-off branch is exactly zero; the herding
/// branch keeps the belief frozen and continues from `value` at the prior.
pub fn q_value(
    prior: Belief,
    value: &ValueFunction,
    model: &ObservationModel,
    alpha: RiskAversion,
    params: &ControllerParams,
    price: f64,
) -> Result<f64> {
    let geom = point_geometry(prior, model, alpha)?;
    Ok(q_from_geometry(&geom, prior, value, params, price))
}

fn q_from_geometry(
    geom: &PointGeometry,
    prior: Belief,
    value: &ValueFunction,
    params: &ControllerParams,
    price: f64,
) -> f64 {
    if price > geom.u_high {
        return 0.0;
    }
    let social_learning =
        price > geom.u_low || (price == geom.u_high && geom.u_high == 1.0);
    if social_learning {
        let ev = geom.expected_continuation(value);
        return match params.reward_case() {
            RewardCase::SelfInterested => {
                (price - params.beta()) * geom.sigma_high + params.rho() * ev
            }
            RewardCase::Altruistic => (price - params.beta()) + params.rho() * ev,
        };
    }
    match params.reward_case() {
        RewardCase::SelfInterested => {
            (price - params.beta()) + params.rho() * value.evaluate(prior.p_high())
        }
        RewardCase::Altruistic => 0.0,
    }
}

/// Best menu entry at an arbitrary belief under a given value function.
pub fn menu_best(
    prior: Belief,
    value: &ValueFunction,
    model: &ObservationModel,
    alpha: RiskAversion,
    params: &ControllerParams,
) -> Result<(PriceChoice, f64, f64)> {
    let geom = point_geometry(prior, model, alpha)?;
    let ev = geom.expected_continuation(value);
    Ok(geom.best(ev, params))
}

struct PointPlan {
    geom: PointGeometry,
    anchor_low: (usize, f64),
    anchor_high: (usize, f64),
}

impl PointPlan {
    fn continuation(&self, values: &[f64]) -> f64 {
        let (j1, w1) = self.anchor_low;
        let (j2, w2) = self.anchor_high;
        self.geom.sigma_low * ((1.0 - w1) * values[j1] + w1 * values[j1 + 1])
            + self.geom.sigma_high * ((1.0 - w2) * values[j2] + w2 * values[j2 + 1])
    }
}

/// Value iteration over the finite price menu.
///
/// Sweeps are Jacobi updates from the previous snapshot until the sup-norm
/// residual drops to `tol`; grid points may be evaluated in parallel without
/// changing any bit of the result. Returns the converged value function, the
/// argmax policy (ties prefer LowPrice over HighPrice over CutOffPrice), the
/// number of sweeps, and the final residual.
pub fn value_iteration(
    grid: &BeliefGrid,
    model: &ObservationModel,
    alpha: RiskAversion,
    params: &ControllerParams,
    tol: f64,
    max_iters: usize,
) -> Result<Solution> {
    if tol <= 0.0 {
        return Err(FusionError::InvalidParameter(format!(
            "convergence tolerance must be positive, got {tol}"
        )));
    }
    if max_iters == 0 {
        return Err(FusionError::InvalidParameter(
            "max_iters must be at least 1".into(),
        ));
    }
    if !model.is_tp2() {
        return Err(FusionError::InvalidParameter(format!(
            "observation matrix must be TP2; determinant = {}",
            model.determinant()
        )));
    }

    let n = grid.len();
    let plans: Vec<PointPlan> = grid
        .points()
        .iter()
        .map(|&p| {
            let belief = Belief::new(p).expect("grid point is a valid belief");
            let geom = point_geometry(belief, model, alpha)?;
            Ok(PointPlan {
                geom,
                anchor_low: grid.interp_anchor(geom.post_low),
                anchor_high: grid.interp_anchor(geom.post_high),
            })
        })
        .collect::<Result<_>>()?;

    let mut values = vec![0.0; n];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iters {
        iterations += 1;
        let next: Vec<f64> = map_indices(n, |i| {
            let plan = &plans[i];
            plan.geom.best(plan.continuation(&values), params).2
        });
        residual = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if residual <= tol {
            let entries: Vec<PolicyEntry> = map_indices(n, |i| {
                let plan = &plans[i];
                let (choice, price, _) = plan.geom.best(plan.continuation(&values), params);
                PolicyEntry { choice, price }
            });
            let value = ValueFunction::new(grid.clone(), values)?;
            let policy = Policy::new(grid.clone(), entries)?;
            return Ok(Solution {
                value,
                policy,
                iterations,
                residual,
            });
        }
    }
    Err(FusionError::NoConvergence {
        iterations,
        residual,
    })
}

/// Reads the structural thresholds off a converged solution and computes the
/// two analytic ones (`delta_star`, `gamma_star`) by direct grid scan.
pub fn extract_thresholds(
    policy: &Policy,
    value: &ValueFunction,
    model: &ObservationModel,
    alpha: RiskAversion,
    params: &ControllerParams,
) -> Result<Thresholds> {
    let grid = policy.grid();
    let mut out = Thresholds::default();
    for (i, entry) in policy.entries().iter().enumerate() {
        let p = grid.point(i);
        if out.pi_star.is_none() && entry.choice != PriceChoice::CutOffPrice {
            out.pi_star = Some(p);
        }
        if out.pi_double_star.is_none() && entry.choice == PriceChoice::LowPrice {
            out.pi_double_star = Some(p);
        }
        if out.pi_hat_star.is_none() && entry.choice == PriceChoice::HighPrice {
            out.pi_hat_star = Some(p);
        }
    }
    for (i, &p) in grid.points().iter().enumerate() {
        let belief = Belief::new(p)?;
        let geom = point_geometry(belief, model, alpha)?;
        if out.delta_star.is_none() && geom.u_high >= 0.0 {
            out.delta_star = Some(p);
        }
        if out.gamma_star.is_none() {
            let ev = geom.expected_continuation(value);
            let q_high = match params.reward_case() {
                RewardCase::SelfInterested => {
                    (geom.u_high - params.beta()) * geom.sigma_high + params.rho() * ev
                }
                RewardCase::Altruistic => (geom.u_high - params.beta()) + params.rho() * ev,
            };
            if q_high >= 0.0 {
                out.gamma_star = Some(p);
            }
        }
        if out.delta_star.is_some() && out.gamma_star.is_some() {
            break;
        }
        let _ = i;
    }
    Ok(out)
}

/// Brute-force maximum of the q-value over a uniform price grid on `[0, 1]`.
/// Verifies menu sufficiency: the finite-menu maximum must match this within
/// one price-grid step.
pub fn dense_price_oracle(
    prior: Belief,
    value: &ValueFunction,
    model: &ObservationModel,
    alpha: RiskAversion,
    params: &ControllerParams,
    n_prices: usize,
) -> Result<(f64, f64)> {
    if n_prices < 100 {
        return Err(FusionError::InvalidParameter(format!(
            "dense price oracle needs at least 100 prices, got {n_prices}"
        )));
    }
    let geom = point_geometry(prior, model, alpha)?;
    let last = (n_prices - 1) as f64;
    let mut best_price = 0.0;
    let mut best_q = f64::NEG_INFINITY;
    for k in 0..n_prices {
        let u = k as f64 / last;
        let q = q_from_geometry(&geom, prior, value, params, u);
        if q > best_q {
            best_q = q;
            best_price = u;
        }
    }
    Ok((best_price, best_q))
}

//! Seeded Monte Carlo simulation of the pricing loop and analytic checks of
//! its martingale structure.
//!
//! A trace draws the true state once from the initial belief, then per step:
//! look up the policy price at the grid-snapped public belief, classify the
//! regime at the true belief, draw the sensor's observation from the state's
//! likelihood row, resolve its action by the CVaR threshold rule, and push
//! the public belief through the social-learning filter with the realized
//! action. The first step whose regime freezes the belief marks the cascade
//! onset; from there on posteriors and actions repeat unchanged.
//!
//! Randomness comes from ChaCha12 seeded with the run seed; ensembles give
//! trace `t` its own counter-mode stream `t`, so any subset of traces is
//! reproducible independently of scheduling. Draw order within a trace:
//! first the state, then one observation per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::{FusionError, Result};
use crate::exec::map_indices;
use crate::filter::{action_probability, belief_transition, regime_of_price, PriceRegime};
use crate::sensor::{
    price_thresholds, sensor_action, Action, Belief, Observation, ObservationModel, RiskAversion,
    State,
};
use crate::solver::{ControllerParams, Policy, PriceChoice};

/// One step of a simulated run. Indices use the fixed encoding
/// (0 = Low / Don't Utilize, 1 = High / Utilize); `p_high` is the public
/// belief after the action was fused.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceStep {
    pub k: usize,
    pub price: f64,
    pub observation: u8,
    pub action: u8,
    pub p_high: f64,
}

/// A full simulated run, replayable from `(seed, stream)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trace {
    pub seed: u64,
    pub stream: u64,
    pub true_state: u8,
    pub cascade_onset: Option<usize>,
    pub steps: Vec<TraceStep>,
}

/// Simulates one trace of `horizon` steps under a solved policy.
pub fn simulate_trace(
    policy: &Policy,
    model: &ObservationModel,
    alpha: RiskAversion,
    params: &ControllerParams,
    initial: Belief,
    horizon: usize,
    seed: u64,
    stream: u64,
) -> Result<Trace> {
    if horizon == 0 {
        return Err(FusionError::InvalidParameter(
            "simulation horizon must be at least 1".into(),
        ));
    }
    let _ = params;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let state = if rng.random::<f64>() < initial.p_high() {
        State::High
    } else {
        State::Low
    };
    let p_high_given_state = model.likelihood(state, Observation::High);

    let mut belief = initial;
    let mut cascade_onset = None;
    let mut steps = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let entry = policy.entry_at(belief.p_high());
        let regime = regime_of_price(belief, model, alpha, entry.price)?;
        let obs = if rng.random::<f64>() < p_high_given_state {
            Observation::High
        } else {
            Observation::Low
        };
        let action = sensor_action(belief, model, obs, alpha, entry.price)?;
        if action_probability(belief, regime, model, action) <= 0.0 {
            return Err(FusionError::InvariantViolation(format!(
                "sensor action {} is impossible in the {} regime at p_high = {}",
                action.index(),
                regime.label(),
                belief.p_high()
            )));
        }
        belief = belief_transition(belief, regime, model, action)?;
        if cascade_onset.is_none() && regime.freezes_belief() {
            cascade_onset = Some(k);
        }
        steps.push(TraceStep {
            k,
            price: entry.price,
            observation: obs.index() as u8,
            action: action.index() as u8,
            p_high: belief.p_high(),
        });
    }
    Ok(Trace {
        seed,
        stream,
        true_state: state.index() as u8,
        cascade_onset,
        steps,
    })
}

/// Simulates `n_traces` independent traces; trace `t` uses RNG stream `t`.
pub fn run_ensemble(
    policy: &Policy,
    model: &ObservationModel,
    alpha: RiskAversion,
    params: &ControllerParams,
    initial: Belief,
    horizon: usize,
    n_traces: usize,
    seed: u64,
) -> Result<Vec<Trace>> {
    if n_traces == 0 {
        return Err(FusionError::InvalidParameter(
            "ensemble needs at least one trace".into(),
        ));
    }
    map_indices(n_traces, |t| {
        simulate_trace(policy, model, alpha, params, initial, horizon, seed, t as u64)
    })
    .into_iter()
    .collect()
}

/// Expected next policy price from a belief: the price-regime dynamics push
/// the belief to its successors and the policy is read at their grid snaps.
/// Frozen regimes return the current price unchanged.
pub fn expected_next_price(
    belief: Belief,
    policy: &Policy,
    model: &ObservationModel,
    alpha: RiskAversion,
    params: &ControllerParams,
) -> Result<f64> {
    let _ = params;
    let entry = policy.entry_at(belief.p_high());
    let regime = regime_of_price(belief, model, alpha, entry.price)?;
    if regime.freezes_belief() {
        return Ok(entry.price);
    }
    let mut expected = 0.0;
    for action in [Action::DontUtilize, Action::Utilize] {
        let sigma = action_probability(belief, regime, model, action);
        if sigma > 0.0 {
            let successor = belief_transition(belief, regime, model, action)?;
            expected += sigma * policy.entry_at(successor.p_high()).price;
        }
    }
    Ok(expected)
}

/// Outcome of the analytic super-martingale sweep over the policy grid.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SupermartingaleReport {
    /// Grid points examined (all of them; frozen regimes hold with equality).
    pub checked: usize,
    /// Points where the expected next price exceeded the current price by
    /// more than the grid-snap tolerance.
    pub violations: usize,
    /// Worst excess over the tolerance (negative = slack everywhere).
    pub max_excess: f64,
    /// Belief where the worst excess occurred.
    pub worst_p_high: f64,
}

/// Sweeps every grid belief and asserts the expected next policy price does
/// not exceed the current one beyond a snap tolerance: one grid step times a
/// local slope bound of the threshold prices, plus the cut-off offset
/// `epsilon` when a successor snaps into the cut-off region.
pub fn supermartingale_check(
    policy: &Policy,
    model: &ObservationModel,
    alpha: RiskAversion,
    params: &ControllerParams,
) -> Result<SupermartingaleReport> {
    let grid = policy.grid();
    let n = grid.len();
    let step = grid.step();
    let mut u_low = vec![0.0; n];
    let mut u_high = vec![0.0; n];
    for (i, &p) in grid.points().iter().enumerate() {
        let t = price_thresholds(Belief::new(p)?, model, alpha)?;
        u_low[i] = t.u_low;
        u_high[i] = t.u_high;
    }
    let slope_bound = |j: usize| -> f64 {
        let lo = j.saturating_sub(1);
        let hi = (j + 1).min(n - 1);
        let mut worst: f64 = 0.0;
        for w in lo..hi {
            worst = worst
                .max((u_high[w + 1] - u_high[w]).abs())
                .max((u_low[w + 1] - u_low[w]).abs());
        }
        worst / step
    };

    let mut report = SupermartingaleReport {
        checked: 0,
        violations: 0,
        max_excess: f64::NEG_INFINITY,
        worst_p_high: 0.0,
    };
    for (i, &p) in grid.points().iter().enumerate() {
        let belief = Belief::new(p)?;
        let entry = policy.entries()[i];
        let regime = regime_of_price(belief, model, alpha, entry.price)?;
        report.checked += 1;
        let (expected, tolerance) = if regime.freezes_belief() {
            (entry.price, 1e-12)
        } else {
            let mut expected = 0.0;
            let mut tolerance = 1e-12;
            for action in [Action::DontUtilize, Action::Utilize] {
                let sigma = action_probability(belief, regime, model, action);
                if sigma <= 0.0 {
                    continue;
                }
                let successor = belief_transition(belief, regime, model, action)?;
                let j = grid.snap_index(successor.p_high());
                expected += sigma * policy.entries()[j].price;
                let mut allow = slope_bound(j) * step;
                if policy.entries()[j].choice == PriceChoice::CutOffPrice {
                    allow += params.epsilon();
                }
                tolerance += sigma * allow;
            }
            (expected, tolerance)
        };
        let excess = expected - entry.price - tolerance;
        if excess > report.max_excess {
            report.max_excess = excess;
            report.worst_p_high = p;
        }
        if excess > 0.0 {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Outcome of the public-belief martingale sweep.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BeliefMartingaleReport {
    pub max_deviation: f64,
    pub worst_p_high: f64,
}

/// Verifies `sum_a sigma(pi, a) T(pi, a) = pi` under the social-learning
/// dynamics at every grid belief.
pub fn belief_martingale_check(
    grid: &crate::solver::BeliefGrid,
    model: &ObservationModel,
) -> Result<BeliefMartingaleReport> {
    let mut report = BeliefMartingaleReport {
        max_deviation: 0.0,
        worst_p_high: 0.0,
    };
    for &p in grid.points() {
        let belief = Belief::new(p)?;
        let mut mixed = 0.0;
        for action in [Action::DontUtilize, Action::Utilize] {
            let sigma = action_probability(belief, PriceRegime::SocialLearning, model, action);
            if sigma > 0.0 {
                let successor =
                    belief_transition(belief, PriceRegime::SocialLearning, model, action)?;
                mixed += sigma * successor.p_high();
            }
        }
        let dev = (mixed - p).abs();
        if dev > report.max_deviation {
            report.max_deviation = dev;
            report.worst_p_high = p;
        }
    }
    Ok(report)
}

/// Per-step ensemble aggregates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepSummary {
    pub step: usize,
    pub mean_price: f64,
    pub mean_p_high: f64,
    /// Fraction of traces whose sensor utilized at this step.
    pub utilize_freq: f64,
    /// Number of traces whose cascade started exactly at this step.
    pub cascade_onsets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub n_traces: usize,
    pub per_step: Vec<StepSummary>,
    /// Traces with no cascade within the horizon.
    pub no_cascade: usize,
}

/// Aggregates an ensemble into per-step means, action frequencies and the
/// cascade-onset histogram.
pub fn ensemble_stats(traces: &[Trace]) -> Result<EnsembleSummary> {
    if traces.is_empty() {
        return Err(FusionError::InvalidParameter(
            "ensemble_stats needs at least one trace".into(),
        ));
    }
    let horizon = traces.iter().map(|t| t.steps.len()).max().unwrap();
    let mut per_step = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let mut price = 0.0;
        let mut p_high = 0.0;
        let mut utilize = 0usize;
        let mut onsets = 0usize;
        let mut count = 0usize;
        for trace in traces {
            if let Some(s) = trace.steps.get(k - 1) {
                count += 1;
                price += s.price;
                p_high += s.p_high;
                utilize += s.action as usize;
            }
            if trace.cascade_onset == Some(k) {
                onsets += 1;
            }
        }
        per_step.push(StepSummary {
            step: k,
            mean_price: price / count as f64,
            mean_p_high: p_high / count as f64,
            utilize_freq: utilize as f64 / count as f64,
            cascade_onsets: onsets,
        });
    }
    Ok(EnsembleSummary {
        n_traces: traces.len(),
        per_step,
        no_cascade: traces.iter().filter(|t| t.cascade_onset.is_none()).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{value_iteration, BeliefGrid, PolicyEntry, RewardCase};
    use approx::assert_abs_diff_eq;

    fn symmetric() -> ObservationModel {
        ObservationModel::new([[0.8, 0.2], [0.2, 0.8]]).unwrap()
    }

    fn alpha(a: f64) -> RiskAversion {
        RiskAversion::new(a).unwrap()
    }

    fn params(case: RewardCase) -> ControllerParams {
        ControllerParams::new(0.1, 0.7, case, 1e-3).unwrap()
    }

    fn solved(case: RewardCase, a: f64, n: usize) -> (Policy, ControllerParams) {
        let grid = BeliefGrid::uniform(n).unwrap();
        let p = params(case);
        let sol = value_iteration(&grid, &symmetric(), alpha(a), &p, 1e-10, 100_000).unwrap();
        (sol.policy, p)
    }

    #[test]
    fn trace_from_pure_high_belief_herds_immediately() {
        let (policy, p) = solved(RewardCase::SelfInterested, 0.9, 201);
        let trace = simulate_trace(
            &policy,
            &symmetric(),
            alpha(0.9),
            &p,
            Belief::new(1.0).unwrap(),
            1,
            7,
            0,
        )
        .unwrap();
        assert_eq!(trace.true_state, 1);
        let step = trace.steps[0];
        assert_eq!(step.price, 1.0);
        assert_eq!(step.action, 1);
        assert_eq!(step.p_high, 1.0);
        assert_eq!(trace.cascade_onset, Some(1));
    }

    #[test]
    fn constant_cutoff_policy_freezes_everything() {
        let grid = BeliefGrid::uniform(101).unwrap();
        let entries = vec![
            PolicyEntry {
                choice: crate::solver::PriceChoice::CutOffPrice,
                price: 1.0,
            };
            101
        ];
        let policy = Policy::new(grid, entries).unwrap();
        let trace = simulate_trace(
            &policy,
            &symmetric(),
            alpha(0.9),
            &params(RewardCase::SelfInterested),
            Belief::new(0.4).unwrap(),
            20,
            3,
            0,
        )
        .unwrap();
        assert_eq!(trace.cascade_onset, Some(1));
        for step in &trace.steps {
            assert_eq!(step.action, 0);
            assert_abs_diff_eq!(step.p_high, 0.4, epsilon = 0.0);
        }
    }

    #[test]
    fn same_seed_and_stream_replays_identically() {
        let (policy, p) = solved(RewardCase::SelfInterested, 0.9, 201);
        let run = || {
            simulate_trace(
                &policy,
                &symmetric(),
                alpha(0.9),
                &p,
                Belief::new(0.5).unwrap(),
                50,
                42,
                3,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn trace_replays_through_the_filter() {
        let (policy, p) = solved(RewardCase::SelfInterested, 0.9, 501);
        let m = symmetric();
        let a = alpha(0.9);
        let trace = simulate_trace(&policy, &m, a, &p, Belief::new(0.5).unwrap(), 100, 11, 5)
            .unwrap();
        let mut belief = Belief::new(0.5).unwrap();
        for step in &trace.steps {
            let regime = regime_of_price(belief, &m, a, step.price).unwrap();
            let action = Action::from_index(step.action).unwrap();
            let obs = Observation::from_index(step.observation).unwrap();
            let resolved = sensor_action(belief, &m, obs, a, step.price).unwrap();
            assert_eq!(resolved, action);
            let next = belief_transition(belief, regime, &m, action).unwrap();
            assert!((next.p_high() - step.p_high).abs() <= 1e-14);
            belief = next;
        }
    }

    #[test]
    fn cascade_is_absorbing() {
        let (policy, p) = solved(RewardCase::SelfInterested, 0.9, 501);
        for stream in 0..50 {
            let trace = simulate_trace(
                &policy,
                &symmetric(),
                alpha(0.9),
                &p,
                Belief::new(0.5).unwrap(),
                80,
                9,
                stream,
            )
            .unwrap();
            if let Some(onset) = trace.cascade_onset {
                let frozen = trace.steps[onset - 1];
                for step in &trace.steps[onset..] {
                    assert_eq!(step.p_high, frozen.p_high);
                    assert_eq!(step.action, frozen.action);
                    assert_eq!(step.price, frozen.price);
                }
            }
        }
    }

    #[test]
    fn expected_next_price_frozen_regions_hold_with_equality() {
        let (policy, p) = solved(RewardCase::SelfInterested, 0.9, 1001);
        let m = symmetric();
        let a = alpha(0.9);
        // deep herding region: price = u_low, belief frozen
        let herd = Belief::new(0.99).unwrap();
        let price = policy.entry_at(0.99).price;
        assert_eq!(
            expected_next_price(herd, &policy, &m, a, &p).unwrap(),
            price
        );
        // cut-off region
        let cut = Belief::new(0.01).unwrap();
        let price = policy.entry_at(0.01).price;
        assert_eq!(expected_next_price(cut, &policy, &m, a, &p).unwrap(), price);
    }

    #[test]
    fn expected_next_price_is_a_jensen_mixture_in_social_learning() {
        let (policy, p) = solved(RewardCase::SelfInterested, 1.0, 1001);
        let m = symmetric();
        let a = alpha(1.0);
        let belief = Belief::new(0.5).unwrap();
        let entry = policy.entry_at(0.5);
        let expected = expected_next_price(belief, &policy, &m, a, &p).unwrap();
        let by_hand =
            0.5 * policy.entry_at(0.2).price + 0.5 * policy.entry_at(0.8).price;
        assert_abs_diff_eq!(expected, by_hand, epsilon = 1e-15);
        assert!(expected <= entry.price + 1e-12);
    }

    #[test]
    fn supermartingale_sweep_clean_on_reference_instance() {
        let (policy, p) = solved(RewardCase::Altruistic, 0.9, 1001);
        let report = supermartingale_check(&policy, &symmetric(), alpha(0.9), &p).unwrap();
        assert_eq!(report.checked, 1001);
        assert_eq!(report.violations, 0, "worst excess {}", report.max_excess);
    }

    #[test]
    fn belief_martingale_examples() {
        let grid = BeliefGrid::uniform(1001).unwrap();
        let report = belief_martingale_check(&grid, &symmetric()).unwrap();
        assert!(report.max_deviation <= 1e-12);
        let flat = ObservationModel::new([[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let report = belief_martingale_check(&grid, &flat).unwrap();
        assert!(report.max_deviation <= 1e-12);
    }

    #[test]
    fn ensemble_stats_single_trace_equals_its_series() {
        let (policy, p) = solved(RewardCase::SelfInterested, 0.9, 201);
        let trace = simulate_trace(
            &policy,
            &symmetric(),
            alpha(0.9),
            &p,
            Belief::new(0.5).unwrap(),
            30,
            21,
            0,
        )
        .unwrap();
        let stats = ensemble_stats(std::slice::from_ref(&trace)).unwrap();
        assert_eq!(stats.n_traces, 1);
        for (s, step) in stats.per_step.iter().zip(&trace.steps) {
            assert_eq!(s.mean_price, step.price);
            assert_eq!(s.mean_p_high, step.p_high);
            assert_eq!(s.utilize_freq, step.action as f64);
        }
        assert!(ensemble_stats(&[]).is_err());
    }

    #[test]
    fn ensemble_stats_onset_histogram_all_at_one() {
        let grid = BeliefGrid::uniform(101).unwrap();
        let entries = vec![
            PolicyEntry {
                choice: crate::solver::PriceChoice::CutOffPrice,
                price: 1.0,
            };
            101
        ];
        let policy = Policy::new(grid, entries).unwrap();
        let traces = run_ensemble(
            &policy,
            &symmetric(),
            alpha(0.9),
            &params(RewardCase::SelfInterested),
            Belief::new(0.4).unwrap(),
            10,
            64,
            5,
        )
        .unwrap();
        let stats = ensemble_stats(&traces).unwrap();
        assert_eq!(stats.per_step[0].cascade_onsets, 64);
        assert_eq!(stats.no_cascade, 0);
        assert!(stats.per_step[1..].iter().all(|s| s.cascade_onsets == 0));
    }

    #[test]
    fn ensemble_streams_are_independent_of_batching() {
        let (policy, p) = solved(RewardCase::SelfInterested, 0.9, 201);
        let traces = run_ensemble(
            &policy,
            &symmetric(),
            alpha(0.9),
            &p,
            Belief::new(0.5).unwrap(),
            20,
            42,
            16,
        )
        .unwrap();
        // each trace must equal a standalone simulation with its stream id
        for (t, trace) in traces.iter().enumerate() {
            let solo = simulate_trace(
                &policy,
                &symmetric(),
                alpha(0.9),
                &p,
                Belief::new(0.5).unwrap(),
                20,
                42,
                t as u64,
            )
            .unwrap();
            assert_eq!(*trace, solo);
        }
    }
}

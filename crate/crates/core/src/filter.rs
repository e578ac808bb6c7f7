//! Public-belief dynamics driven by observed actions.
//!
//! The price charged at a belief determines which of three regimes the sensor
//! population is in, and with it the likelihood matrix `r[i][a] = P(a | x=i)`
//! of the social learning filter `T(pi, a) = R_a pi / (1' R_a pi)`:
//!
//! - Herding (`u <= u_low`): every sensor utilizes; actions carry no
//!   information and the belief freezes.
//! - Social learning (`u_low < u <= u_high`): the action reveals the private
//!   observation, so the likelihood matrix is the observation matrix itself.
//! - Cut-off (`u > u_high`): no sensor utilizes; the belief freezes again.

use crate::error::{FusionError, Result};
use crate::sensor::{
    price_thresholds, Action, Belief, ObservationModel, RiskAversion, MATRIX_TOL,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriceRegime {
    Herding,
    SocialLearning,
    CutOff,
}

impl PriceRegime {
    pub fn label(self) -> &'static str {
        match self {
            PriceRegime::Herding => "herding",
            PriceRegime::SocialLearning => "social-learning",
            PriceRegime::CutOff => "cut-off",
        }
    }

    /// Whether the public belief stops updating in this regime.
    pub fn freezes_belief(self) -> bool {
        self != PriceRegime::SocialLearning
    }
}

/// Action likelihood matrix `r[i][a] = P(a | x = i)` under a price regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionLikelihood {
    matrix: [[f64; 2]; 2],
}

impl ActionLikelihood {
    pub fn for_regime(regime: PriceRegime, model: &ObservationModel) -> Self {
        let matrix = match regime {
            PriceRegime::Herding => [[0.0, 1.0], [0.0, 1.0]],
            PriceRegime::SocialLearning => model.rows(),
            PriceRegime::CutOff => [[1.0, 0.0], [1.0, 0.0]],
        };
        ActionLikelihood { matrix }
    }

    pub fn prob(&self, state_index: usize, action: Action) -> f64 {
        self.matrix[state_index][action.index()]
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.matrix
    }
}

/// Classifies a price at a prior. Boundaries are closed on the right:
/// `u = u_low` herds, `u = u_high` still sustains social learning.
pub fn regime_of_price(
    prior: Belief,
    model: &ObservationModel,
    alpha: RiskAversion,
    price: f64,
) -> Result<PriceRegime> {
    let t = price_thresholds(prior, model, alpha)?;
    Ok(if price <= t.u_low {
        PriceRegime::Herding
    } else if price <= t.u_high {
        PriceRegime::SocialLearning
    } else {
        PriceRegime::CutOff
    })
}

/// Probability `sigma(pi, a)` that the acting sensor takes `action`.
pub fn action_probability(
    prior: Belief,
    regime: PriceRegime,
    model: &ObservationModel,
    action: Action,
) -> f64 {
    let r = ActionLikelihood::for_regime(regime, model);
    r.prob(0, action) * prior.p_low() + r.prob(1, action) * prior.p_high()
}

/// Social learning filter `T(pi, a)`: the public belief after observing the
/// action. In the frozen regimes the realized action's posterior equals the
/// prior; requesting a zero-probability action is an error.
pub fn belief_transition(
    prior: Belief,
    regime: PriceRegime,
    model: &ObservationModel,
    action: Action,
) -> Result<Belief> {
    let r = ActionLikelihood::for_regime(regime, model);
    let num_low = r.prob(0, action) * prior.p_low();
    let num_high = r.prob(1, action) * prior.p_high();
    let norm = num_low + num_high;
    if norm <= 0.0 {
        return Err(FusionError::ImpossibleAction {
            action: action.index() as u8,
            regime: regime.label(),
        });
    }
    Ok(Belief::from_normalized(num_high / norm))
}

/// Blackwell ordering of the regime likelihoods: the cut-off matrix equals
/// the social-learning matrix times the stochastic matrix `[[1,0],[1,0]]`,
/// so social-learning prices are more informative than frozen ones. The
/// identity holds entrywise for any row-stochastic observation matrix; this
/// verifies it numerically.
pub fn blackwell_check(model: &ObservationModel) -> bool {
    let informative = model.rows();
    let garbling = [[1.0, 0.0], [1.0, 0.0]];
    let degraded = [[1.0, 0.0], [1.0, 0.0]];
    for i in 0..2 {
        for j in 0..2 {
            let prod: f64 = (0..2).map(|k| informative[i][k] * garbling[k][j]).sum();
            if (prod - degraded[i][j]).abs() > MATRIX_TOL {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{private_belief_update, Observation};
    use approx::assert_abs_diff_eq;

    fn symmetric() -> ObservationModel {
        ObservationModel::new([[0.8, 0.2], [0.2, 0.8]]).unwrap()
    }

    fn neutral() -> RiskAversion {
        RiskAversion::new(1.0).unwrap()
    }

    #[test]
    fn regime_classification_with_closed_right_boundaries() {
        let prior = Belief::new(0.5).unwrap();
        let m = symmetric();
        // thresholds are (0.2, 0.8) here
        let mid = regime_of_price(prior, &m, neutral(), 0.5).unwrap();
        let at_low = regime_of_price(prior, &m, neutral(), 0.2).unwrap();
        let above_high = regime_of_price(prior, &m, neutral(), 0.9).unwrap();
        assert_eq!(mid, PriceRegime::SocialLearning);
        assert_eq!(at_low, PriceRegime::Herding);
        assert_eq!(above_high, PriceRegime::CutOff);
    }

    #[test]
    fn action_probabilities_per_regime() {
        let prior = Belief::new(0.5).unwrap();
        let m = symmetric();
        let sl = action_probability(prior, PriceRegime::SocialLearning, &m, Action::Utilize);
        assert_abs_diff_eq!(sl, 0.5, epsilon = 1e-15);
        let herd = action_probability(prior, PriceRegime::Herding, &m, Action::Utilize);
        assert_eq!(herd, 1.0);
        let cut = action_probability(prior, PriceRegime::CutOff, &m, Action::Utilize);
        assert_eq!(cut, 0.0);
        for regime in [
            PriceRegime::Herding,
            PriceRegime::SocialLearning,
            PriceRegime::CutOff,
        ] {
            let both: f64 = [Action::DontUtilize, Action::Utilize]
                .into_iter()
                .map(|a| action_probability(prior, regime, &m, a))
                .sum();
            assert_abs_diff_eq!(both, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn social_learning_transition_matches_private_update() {
        let prior = Belief::new(0.5).unwrap();
        let m = symmetric();
        let t =
            belief_transition(prior, PriceRegime::SocialLearning, &m, Action::Utilize).unwrap();
        let eta = private_belief_update(prior, &m, Observation::High).unwrap();
        assert_abs_diff_eq!(t.p_high(), 0.8, epsilon = 1e-15);
        assert_eq!(t.p_high(), eta.p_high());
    }

    #[test]
    fn frozen_regimes_keep_the_prior() {
        let prior = Belief::new(0.37).unwrap();
        let m = symmetric();
        let herd = belief_transition(prior, PriceRegime::Herding, &m, Action::Utilize).unwrap();
        let cut = belief_transition(prior, PriceRegime::CutOff, &m, Action::DontUtilize).unwrap();
        assert_eq!(herd.p_high(), 0.37);
        assert_eq!(cut.p_high(), 0.37);
    }

    #[test]
    fn impossible_action_is_an_error() {
        let prior = Belief::new(0.37).unwrap();
        let err = belief_transition(prior, PriceRegime::Herding, &symmetric(), Action::DontUtilize)
            .unwrap_err();
        assert!(matches!(err, FusionError::ImpossibleAction { .. }));
    }

    #[test]
    fn blackwell_identity_holds() {
        for rows in [
            [[0.8, 0.2], [0.2, 0.8]],
            [[0.5, 0.5], [0.5, 0.5]],
            [[1.0, 0.0], [0.0, 1.0]],
        ] {
            assert!(blackwell_check(&ObservationModel::new(rows).unwrap()));
        }
    }
}

//! Population risk, empirical risk and the generalization gap of the
//! construction's learning rule.

use serde::{Deserialize, Serialize};

use crate::construction::{
    loss, predict_tallied, ConstructionParams, Instance, Sign, TrainingSet,
};
use crate::error::{LabError, Result};

/// Largest support size (`2d`) the brute-force population risk will walk.
pub const MAX_ENUMERATED_SUPPORT: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdown {
    pub population: f64,
    pub empirical: f64,
    /// `population - empirical`.
    pub gap: f64,
}

/// Population risk of the rule, `3·lmax/2`, whatever the training set.
pub fn population_risk_closed(params: &ConstructionParams) -> f64 {
    1.5 * params.lmax()
}

/// Exact expectation of the loss over the `2d` equally likely domain points.
pub fn population_risk_bruteforce(train: &TrainingSet, params: &ConstructionParams) -> Result<f64> {
    let support = 2 * params.d() as u128;
    if support > MAX_ENUMERATED_SUPPORT {
        return Err(LabError::TooLargeToEnumerate {
            what: "population support",
            size: support,
            limit: MAX_ENUMERATED_SUPPORT,
            fallback: "use population_risk_closed",
        });
    }
    let tally = train.tally();
    let mut total = 0.0;
    for index in 1..=params.d() {
        for sign in [Sign::Plus, Sign::Minus] {
            let x = Instance::new(index, sign);
            total += loss(&predict_tallied(&tally, x), x, params);
        }
    }
    Ok(total / support as f64)
}

/// Average training loss `(1/n)·Σᵢ ℓ(A_S(xᵢ), yᵢ)`.
///
/// On a training point the prediction shares the label's coordinate, so each
/// term is `σ·(lmax − g)` on a sign match and `σ·(lmax + g)` otherwise. The
/// σ-weights of both kinds are tallied as integers and scaled once, which
/// makes the orthogonal-sample case agree bit-for-bit with
/// [`empirical_risk_orthogonal`].
pub fn empirical_risk(train: &TrainingSet, params: &ConstructionParams) -> f64 {
    let tally = train.tally();
    let mut matched: u64 = 0;
    let mut mismatched: u64 = 0;
    for ex in train.examples() {
        let pred = predict_tallied(&tally, ex.x());
        let sigma = params.sigma(ex.y().index) as u64;
        if pred.sign_hat == ex.y().sign {
            matched += sigma;
        } else {
            mismatched += sigma;
        }
    }
    let lmax = params.lmax();
    let g = params.g();
    (matched as f64 * (lmax - g) + mismatched as f64 * (lmax + g)) / params.n() as f64
}

/// Empirical risk when all training inputs sit on distinct axes:
/// `(lmax − g)·Σσ⁽ⁱ⁾ / n`.
pub fn empirical_risk_orthogonal(sigma_sum: u64, params: &ConstructionParams) -> f64 {
    (sigma_sum as f64 * (params.lmax() - params.g())) / params.n() as f64
}

/// `Σᵢ σ(xᵢ)` over the training inputs.
pub fn sigma_sum(train: &TrainingSet, params: &ConstructionParams) -> u64 {
    train.inputs().map(|x| params.sigma(x.index) as u64).sum()
}

pub fn generalization_gap(train: &TrainingSet, params: &ConstructionParams) -> RiskBreakdown {
    let population = population_risk_closed(params);
    let empirical = empirical_risk(train, params);
    RiskBreakdown {
        population,
        empirical,
        gap: population - empirical,
    }
}

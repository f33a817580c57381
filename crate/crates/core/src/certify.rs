//! Numerical certificates for uniform stability and loss boundedness.
//!
//! A [`LearningRule`] maps a training set and a query to a [`Prediction`]
//! and scores predictions with its own loss. The certifiers search for the
//! largest loss change `|ℓ(A_S(x), y) − ℓ(A_{Sⁱ}(x), y)|` caused by replacing
//! one training example, either over every tuple of a small instance or by
//! biased random sampling on large ones.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::{
    loss, predict, sample_instance, ConstructionParams, Instance, LabeledExample, Prediction,
    Sign, TrainingSet,
};
use crate::error::{LabError, Result};

/// Upper limit on loss evaluations in an exhaustive search.
pub const MAX_EXHAUSTIVE_EVALUATIONS: u128 = 1_000_000_000;

/// Absolute slack for certificate comparisons.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-12;

/// A deterministic learning rule on the construction's domain.
pub trait LearningRule: Sync {
    fn predict(&self, train: &TrainingSet, x: Instance) -> Prediction;

    fn loss(&self, pred: &Prediction, y: Instance) -> f64;

    /// True when the prediction at coordinate `i` depends only on the
    /// training inputs lying on coordinate `i`.
    ///
    /// Replacing one example then changes predictions on at most the two
    /// coordinates of the removed and inserted inputs, and the loss at any
    /// other evaluation point is untouched. The exhaustive certifier uses
    /// this to skip evaluation points whose loss change is exactly zero.
    fn is_coordinatewise(&self) -> bool {
        false
    }
}

/// The construction's own sign-majority rule with ℓ₁ loss.
#[derive(Debug, Clone, Copy)]
pub struct ConstructionRule {
    pub params: ConstructionParams,
}

impl LearningRule for ConstructionRule {
    fn predict(&self, train: &TrainingSet, x: Instance) -> Prediction {
        predict(train, x, &self.params)
    }

    fn loss(&self, pred: &Prediction, y: Instance) -> f64 {
        loss(pred, y, &self.params)
    }

    fn is_coordinatewise(&self) -> bool {
        true
    }
}

/// Ignores the training set and always answers with sign `+1`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRule {
    pub params: ConstructionParams,
}

impl LearningRule for ConstantRule {
    fn predict(&self, _train: &TrainingSet, x: Instance) -> Prediction {
        Prediction {
            index: x.index,
            sign_hat: Sign::Plus,
        }
    }

    fn loss(&self, pred: &Prediction, y: Instance) -> f64 {
        loss(pred, y, &self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Exhaustive,
    Randomized,
}

/// The tuple that attained the reported supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityWitness {
    pub train: Vec<Instance>,
    /// 1-based.
    pub position: usize,
    pub replacement: Instance,
    /// Evaluation point; its label is itself.
    pub evaluation: Instance,
    pub loss_original: f64,
    pub loss_replaced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub supremum_found: f64,
    pub mode: SearchMode,
    /// Number of `(S, position, replacement, evaluation point)` tuples
    /// evaluated.
    pub budget_inspected: u64,
    pub witness: Option<StabilityWitness>,
}

impl StabilityCertificate {
    /// Whether the supremum stays within `gamma` (with certificate slack).
    pub fn within(&self, gamma: f64) -> bool {
        self.supremum_found <= gamma + CERTIFICATE_TOLERANCE
    }
}

/// Copy of `train` with the example at 1-based `position` replaced.
pub fn replace_one(
    train: &TrainingSet,
    position: usize,
    replacement: LabeledExample,
) -> Result<TrainingSet> {
    let n = train.len();
    if position == 0 || position > n {
        return Err(LabError::PositionOutOfRange { position, n });
    }
    let mut examples = train.examples().to_vec();
    examples[position - 1] = replacement;
    Ok(TrainingSet::from_examples_unchecked(examples))
}

#[derive(Clone)]
struct Best {
    value: f64,
    witness: Option<StabilityWitness>,
    inspected: u64,
}

impl Best {
    fn empty() -> Self {
        Self {
            value: 0.0,
            witness: None,
            inspected: 0,
        }
    }

    // Earlier tuples win ties so the witness is reproducible.
    fn merge(mut self, later: Best) -> Best {
        self.inspected += later.inspected;
        if self.witness.is_none() || later.value > self.value {
            self.value = later.value;
            self.witness = later.witness;
        }
        self
    }
}

fn evaluate<R: LearningRule + ?Sized>(
    rule: &R,
    before: &TrainingSet,
    after: &TrainingSet,
    x: Instance,
    best: &mut Best,
    position: usize,
    replacement: Instance,
) {
    let loss_original = rule.loss(&rule.predict(before, x), x);
    let loss_replaced = rule.loss(&rule.predict(after, x), x);
    let delta = (loss_original - loss_replaced).abs();
    best.inspected += 1;
    if best.witness.is_none() || delta > best.value {
        best.value = delta;
        best.witness = Some(StabilityWitness {
            train: before.inputs().collect(),
            position,
            replacement,
            evaluation: x,
            loss_original,
            loss_replaced,
        });
    }
}

fn decode(code: u64) -> Instance {
    let index = (code / 2) as usize + 1;
    let sign = if code % 2 == 0 { Sign::Plus } else { Sign::Minus };
    Instance::new(index, sign)
}

/// Exhaustive search with the construction rule.
pub fn certify_stability_exhaustive(params: &ConstructionParams) -> Result<StabilityCertificate> {
    certify_stability_exhaustive_with(&ConstructionRule { params: *params }, params)
}

/// Exhaustive search over every `S ∈ 𝒵ⁿ` (duplicates included), position,
/// replacement and evaluation point `(x, x) ∈ 𝒵`.
///
/// The space is split by the first training input; partitions are reduced
/// in order, so the result does not depend on scheduling.
pub fn certify_stability_exhaustive_with<R: LearningRule + ?Sized>(
    rule: &R,
    params: &ConstructionParams,
) -> Result<StabilityCertificate> {
    let n = params.n();
    let points = 2 * params.d() as u64;
    let evals_per_replacement: u128 = if rule.is_coordinatewise() { 4 } else { points as u128 };
    let planned = (points as u128)
        .checked_pow(n as u32)
        .and_then(|sets| sets.checked_mul(n as u128 * points as u128 * evals_per_replacement))
        .unwrap_or(u128::MAX);
    if planned > MAX_EXHAUSTIVE_EVALUATIONS {
        return Err(LabError::TooLargeToEnumerate {
            what: "stability search space",
            size: planned,
            limit: MAX_EXHAUSTIVE_EVALUATIONS,
            fallback: "use certify_stability_random",
        });
    }

    let tail_sets = points.pow(n as u32 - 1);
    let partials: Vec<Best> = (0..points)
        .into_par_iter()
        .map(|first| {
            let mut best = Best::empty();
            let mut codes = vec![0u64; n];
            for rest in 0..tail_sets {
                codes[0] = first;
                let mut r = rest;
                for c in codes.iter_mut().skip(1) {
                    *c = r % points;
                    r /= points;
                }
                let before = TrainingSet::from_examples_unchecked(
                    codes.iter().map(|&c| LabeledExample::new(decode(c))).collect(),
                );
                for position in 1..=n {
                    let removed = before.examples()[position - 1].x();
                    for rc in 0..points {
                        let replacement = decode(rc);
                        let after = replace_one(&before, position, replacement.into())
                            .expect("position is in range");
                        if rule.is_coordinatewise() {
                            let mut axes = [removed.index, replacement.index];
                            axes.sort_unstable();
                            let distinct = if axes[0] == axes[1] { 1 } else { 2 };
                            for &index in &axes[..distinct] {
                                for sign in [Sign::Plus, Sign::Minus] {
                                    evaluate(rule, &before, &after, Instance::new(index, sign), &mut best, position, replacement);
                                }
                            }
                        } else {
                            for xc in 0..points {
                                evaluate(rule, &before, &after, decode(xc), &mut best, position, replacement);
                            }
                        }
                    }
                }
            }
            best
        })
        .collect();
    let best = partials.into_iter().fold(Best::empty(), Best::merge);
    Ok(StabilityCertificate {
        supremum_found: best.value,
        mode: SearchMode::Exhaustive,
        budget_inspected: best.inspected,
        witness: best.witness,
    })
}

/// Randomized search with the construction rule.
pub fn certify_stability_random<G: RngCore + ?Sized>(
    params: &ConstructionParams,
    trials: u64,
    rng: &mut G,
) -> Result<StabilityCertificate> {
    certify_stability_random_with(&ConstructionRule { params: *params }, params, trials, rng)
}

/// Random search biased toward informative tuples: half of the replacements
/// flip the sign of the removed input in place, and evaluation mostly
/// happens on the coordinates touched by the replacement. The result is a
/// lower bound on the true supremum.
pub fn certify_stability_random_with<R: LearningRule + ?Sized, G: RngCore + ?Sized>(
    rule: &R,
    params: &ConstructionParams,
    trials: u64,
    rng: &mut G,
) -> Result<StabilityCertificate> {
    if trials == 0 {
        return Err(LabError::Domain("need at least one trial".into()));
    }
    let n = params.n();
    let mut best = Best::empty();
    for _ in 0..trials {
        let before = TrainingSet::sample(params, rng);
        let position = rng.random_range(1..=n);
        let removed = before.examples()[position - 1].x();
        let replacement = if rng.random_bool(0.5) {
            removed.flipped()
        } else {
            sample_instance(params, rng)
        };
        let after = replace_one(&before, position, replacement.into())?;
        let x = match rng.random_range(0..8u8) {
            0 => sample_instance(params, rng),
            k => {
                let index = if k % 2 == 0 { removed.index } else { replacement.index };
                Instance::new(index, if rng.random_bool(0.5) { Sign::Plus } else { Sign::Minus })
            }
        };
        evaluate(rule, &before, &after, x, &mut best, position, replacement);
    }
    Ok(StabilityCertificate {
        supremum_found: best.value,
        mode: SearchMode::Randomized,
        budget_inspected: best.inspected,
        witness: best.witness,
    })
}

/// Largest same-coordinate loss for output magnitude `g` and base scale
/// `lmax`: attained at `σ = 2` with opposite signs, `2(lmax + g)`.
pub fn max_same_coordinate_loss(g: f64, lmax: f64) -> f64 {
    let mut max: f64 = 0.0;
    for sigma in [1.0, 2.0] {
        for sign_hat in [1.0, -1.0] {
            for sign_y in [1.0, -1.0] {
                let l: f64 = sigma * (sign_hat * g - sign_y * lmax).abs();
                max = max.max(l);
            }
        }
    }
    max
}

/// Maximum loss over same-coordinate pairs, evaluated with the
/// construction's loss on one short and one long axis.
pub fn certify_boundedness(params: &ConstructionParams) -> f64 {
    let mut max: f64 = 0.0;
    for index in [1, params.d()] {
        for sign_hat in [Sign::Plus, Sign::Minus] {
            for sign_y in [Sign::Plus, Sign::Minus] {
                let l = loss(&Prediction { index, sign_hat }, Instance::new(index, sign_y), params);
                max = max.max(l);
            }
        }
    }
    max
}

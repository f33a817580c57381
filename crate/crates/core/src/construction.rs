//! The hard-case construction: domain, sampling distribution, learning rule
//! and ℓ₁ loss, all kept in sparse form.
//!
//! The domain consists of the `2d` vectors `±lmax·σᵢ·eᵢ` with `d = 4n²` and
//! `σᵢ = 1` on the first half of coordinates, `2` on the second half. Every
//! example is labeled by itself. The learning rule answers a query on
//! coordinate `i` with `sign(cᵢ)·g·σᵢ·eᵢ`, where `cᵢ` is the signed number of
//! training inputs lying on axis `i`.
//!
//! Dense vectors are never built: an [`Instance`] is an `(index, sign)` pair
//! and every quantity is evaluated in closed form on that pair.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Orientation along a basis axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn value(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    /// Sign of a signed count, with `sign(0) = +1`.
    pub fn of_count(count: i64) -> Sign {
        if count < 0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    pub fn from_value(v: i64) -> Option<Sign> {
        match v {
            1 => Some(Sign::Plus),
            -1 => Some(Sign::Minus),
            _ => None,
        }
    }
}

/// Target stability and loss budgets plus the scales derived from them.
///
/// Callers give the theorem-level `(γ, L)`; internally the rule emits
/// magnitude `g = γ/4` and instances have base scale `lmax = L/4`, so the
/// certified stability is at most `γ` and the loss is bounded by `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructionParams {
    n: usize,
    gamma_target: f64,
    l_target: f64,
    g: f64,
    lmax: f64,
    d: usize,
}

impl ConstructionParams {
    pub fn new(n: usize, gamma_target: f64, l_target: f64) -> Result<Self> {
        if n == 0 {
            return Err(LabError::InvalidParams {
                field: "n",
                reason: "sample count must be at least 1".into(),
            });
        }
        if !(gamma_target.is_finite() && gamma_target > 0.0) {
            return Err(LabError::InvalidParams {
                field: "gamma",
                reason: format!("must be a positive finite number, got {gamma_target}"),
            });
        }
        if !(l_target.is_finite() && l_target > 0.0) {
            return Err(LabError::InvalidParams {
                field: "l",
                reason: format!("must be a positive finite number, got {l_target}"),
            });
        }
        if gamma_target > l_target {
            return Err(LabError::InvalidParams {
                field: "gamma",
                reason: format!("requires 0 < gamma <= L, got gamma={gamma_target} > L={l_target}"),
            });
        }
        let d = n
            .checked_mul(n)
            .and_then(|nn| nn.checked_mul(4))
            .ok_or_else(|| LabError::InvalidParams {
                field: "n",
                reason: format!("4n^2 overflows for n={n}"),
            })?;
        Ok(Self {
            n,
            gamma_target,
            l_target,
            g: gamma_target / 4.0,
            lmax: l_target / 4.0,
            d,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma_target(&self) -> f64 {
        self.gamma_target
    }

    pub fn l_target(&self) -> f64 {
        self.l_target
    }

    /// Output magnitude of the learning rule.
    pub fn g(&self) -> f64 {
        self.g
    }

    /// Base scale of the instances.
    pub fn lmax(&self) -> f64 {
        self.lmax
    }

    /// Number of coordinates, `4n²`.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Gap threshold `γ/4 + L/(32√n)` in theorem units (equal to
    /// `g + lmax/(8√n)`).
    pub fn gap_threshold(&self) -> f64 {
        self.gamma_target / 4.0 + self.l_target / (32.0 * (self.n as f64).sqrt())
    }

    /// `σ(index)` without bounds checking; callers guarantee `1 ≤ index ≤ d`.
    #[inline]
    pub(crate) fn sigma(&self, index: usize) -> u32 {
        if index > self.d / 2 {
            2
        } else {
            1
        }
    }

    pub(crate) fn check_index(&self, index: usize) -> Result<()> {
        if index == 0 || index > self.d {
            Err(LabError::IndexOutOfRange { index, d: self.d })
        } else {
            Ok(())
        }
    }
}

/// One domain point `sign · lmax · σ(index) · e_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Instance {
    pub index: usize,
    pub sign: Sign,
}

impl Instance {
    pub fn new(index: usize, sign: Sign) -> Self {
        Self { index, sign }
    }

    /// Checked constructor for integer signs (`±1`).
    pub fn checked(index: usize, sign: i64, params: &ConstructionParams) -> Result<Self> {
        params.check_index(index)?;
        let sign = Sign::from_value(sign)
            .ok_or_else(|| LabError::Domain(format!("sign must be +1 or -1, got {sign}")))?;
        Ok(Self { index, sign })
    }

    pub fn flipped(self) -> Self {
        Self {
            index: self.index,
            sign: self.sign.flip(),
        }
    }
}

/// A training example; the label of every input is the input itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    x: Instance,
}

impl LabeledExample {
    pub fn new(x: Instance) -> Self {
        Self { x }
    }

    pub fn x(&self) -> Instance {
        self.x
    }

    pub fn y(&self) -> Instance {
        self.x
    }
}

impl From<Instance> for LabeledExample {
    fn from(x: Instance) -> Self {
        Self::new(x)
    }
}

/// `n` labeled examples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSet {
    examples: Vec<LabeledExample>,
}

impl TrainingSet {
    pub fn new(examples: Vec<LabeledExample>, params: &ConstructionParams) -> Result<Self> {
        if examples.len() != params.n() {
            return Err(LabError::WrongSampleCount {
                got: examples.len(),
                expected: params.n(),
            });
        }
        for e in &examples {
            params.check_index(e.x().index)?;
        }
        Ok(Self { examples })
    }

    pub fn from_instances(
        instances: impl IntoIterator<Item = Instance>,
        params: &ConstructionParams,
    ) -> Result<Self> {
        Self::new(instances.into_iter().map(LabeledExample::new).collect(), params)
    }

    /// Draws `n` i.i.d. examples from the uniform distribution on the domain.
    pub fn sample<R: Rng + ?Sized>(params: &ConstructionParams, rng: &mut R) -> Self {
        let examples = (0..params.n())
            .map(|_| LabeledExample::new(sample_instance(params, rng)))
            .collect();
        Self { examples }
    }

    /// Unvalidated constructor for callers that already guarantee the
    /// length and index invariants.
    pub(crate) fn from_examples_unchecked(examples: Vec<LabeledExample>) -> Self {
        Self { examples }
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = Instance> + '_ {
        self.examples.iter().map(|e| e.x())
    }

    /// Per-coordinate signed counts, for repeated predictions.
    pub fn tally(&self) -> SignTally {
        SignTally::new(self)
    }
}

/// Signed counts `cᵢ` of the training inputs, sorted by coordinate.
#[derive(Debug, Clone)]
pub struct SignTally {
    counts: Vec<(usize, i64)>,
}

impl SignTally {
    fn new(train: &TrainingSet) -> Self {
        let mut pairs: Vec<(usize, i64)> = train.inputs().map(|x| (x.index, x.sign.value())).collect();
        pairs.sort_unstable_by_key(|p| p.0);
        let mut counts: Vec<(usize, i64)> = Vec::with_capacity(pairs.len());
        for (index, v) in pairs {
            match counts.last_mut() {
                Some(last) if last.0 == index => last.1 += v,
                _ => counts.push((index, v)),
            }
        }
        Self { counts }
    }

    pub fn count(&self, index: usize) -> i64 {
        self.counts
            .binary_search_by_key(&index, |p| p.0)
            .map(|pos| self.counts[pos].1)
            .unwrap_or(0)
    }

    pub fn sign(&self, index: usize) -> Sign {
        Sign::of_count(self.count(index))
    }

    /// Number of distinct coordinates hit by the training inputs.
    pub fn distinct_indices(&self) -> usize {
        self.counts.len()
    }
}

/// Output of the learning rule: `sign_hat · g · σ(index) · e_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub sign_hat: Sign,
}

/// `σ(index)`: 1 on the first `d/2` coordinates, 2 on the rest.
pub fn scale_factor(index: usize, params: &ConstructionParams) -> Result<u32> {
    params.check_index(index)?;
    Ok(params.sigma(index))
}

/// One draw from the uniform distribution over the `2d` domain points.
pub fn sample_instance<R: Rng + ?Sized>(params: &ConstructionParams, rng: &mut R) -> Instance {
    let index = rng.random_range(1..=params.d());
    let sign = if rng.random::<bool>() {
        Sign::Plus
    } else {
        Sign::Minus
    };
    Instance { index, sign }
}

/// `sign((Σⱼ xⱼ)_index)` with the tie convention `sign(0) = +1`.
pub fn coordinate_sign(train: &TrainingSet, index: usize) -> Sign {
    let count: i64 = train
        .inputs()
        .filter(|x| x.index == index)
        .map(|x| x.sign.value())
        .sum();
    Sign::of_count(count)
}

/// The learning rule. Reads only the query's coordinate, never its sign.
pub fn predict(train: &TrainingSet, x: Instance, _params: &ConstructionParams) -> Prediction {
    Prediction {
        index: x.index,
        sign_hat: coordinate_sign(train, x.index),
    }
}

/// Same as [`predict`] against a precomputed tally.
pub fn predict_tallied(tally: &SignTally, x: Instance) -> Prediction {
    Prediction {
        index: x.index,
        sign_hat: tally.sign(x.index),
    }
}

/// ℓ₁ distance between the prediction vector and the label vector.
pub fn loss(pred: &Prediction, y: Instance, params: &ConstructionParams) -> f64 {
    let g = params.g();
    let lmax = params.lmax();
    if pred.index == y.index {
        let sigma = params.sigma(y.index) as f64;
        let diff = pred.sign_hat.value() as f64 * g - y.sign.value() as f64 * lmax;
        sigma * diff.abs()
    } else {
        g * params.sigma(pred.index) as f64 + lmax * params.sigma(y.index) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn p(n: usize, gamma: f64, l: f64) -> ConstructionParams {
        ConstructionParams::new(n, gamma, l).unwrap()
    }

    fn inst(index: usize, sign: i64) -> Instance {
        Instance::new(index, Sign::from_value(sign).unwrap())
    }

    // g = 1, lmax = 4, d = 16
    fn params_n2() -> ConstructionParams {
        p(2, 4.0, 16.0)
    }

    #[test]
    fn params_derivation() {
        let params = p(3, 0.5, 2.0);
        assert_eq!(params.d(), 36);
        assert_eq!(params.g(), 0.125);
        assert_eq!(params.lmax(), 0.5);
        assert!(ConstructionParams::new(0, 1.0, 1.0).is_err());
        assert!(ConstructionParams::new(1, 2.0, 1.0).is_err());
        assert!(ConstructionParams::new(1, 0.0, 1.0).is_err());
        assert!(ConstructionParams::new(1, 1.0, 1.0).is_ok());
    }

    #[test]
    fn scale_factor_boundaries() {
        let params = params_n2();
        assert_eq!(scale_factor(1, &params).unwrap(), 1);
        assert_eq!(scale_factor(8, &params).unwrap(), 1);
        assert_eq!(scale_factor(9, &params).unwrap(), 2);
        assert_eq!(scale_factor(16, &params).unwrap(), 2);
        assert!(matches!(
            scale_factor(0, &params),
            Err(LabError::IndexOutOfRange { .. })
        ));
        assert!(scale_factor(17, &params).is_err());
    }

    #[test]
    fn half_the_coordinates_are_long() {
        for n in 1..=6 {
            let params = p(n, 0.1, 1.0);
            let d = params.d();
            assert_eq!(d % 2, 0);
            let twos = (1..=d).filter(|&i| params.sigma(i) == 2).count();
            assert_eq!(twos, d / 2);
            let total: u32 = (1..=d).map(|i| params.sigma(i)).sum();
            assert_eq!(2 * total as usize, 3 * d);
        }
    }

    #[test]
    fn sampling_is_uniform_over_cells() {
        let params = params_n2();
        let d = params.d();
        let cells = 2 * d;
        let draws = cells * 100_000;
        let mut counts = vec![0u64; cells];
        let mut rng = stream(11);
        let mut short = 0u64;
        for _ in 0..draws {
            let x = sample_instance(&params, &mut rng);
            let cell = (x.index - 1) * 2 + usize::from(x.sign == Sign::Minus);
            counts[cell] += 1;
            if params.sigma(x.index) == 1 {
                short += 1;
            }
        }
        let prob = 1.0 / cells as f64;
        let sd = (draws as f64 * prob * (1.0 - prob)).sqrt();
        for &c in &counts {
            assert!((c as f64 - draws as f64 * prob).abs() < 5.0 * sd, "cell count {c}");
        }
        let half_sd = (draws as f64 * 0.25).sqrt();
        assert!((short as f64 - draws as f64 / 2.0).abs() < 5.0 * half_sd);
    }

    #[test]
    fn sampling_is_deterministic() {
        let params = p(5, 0.2, 1.0);
        let a = TrainingSet::sample(&params, &mut stream(3));
        let b = TrainingSet::sample(&params, &mut stream(3));
        assert_eq!(a, b);
    }

    #[test]
    fn coordinate_sign_examples() {
        let params = params_n2();
        let s = TrainingSet::from_instances([inst(3, 1), inst(10, -1)], &params).unwrap();
        assert_eq!(coordinate_sign(&s, 3), Sign::Plus);
        assert_eq!(coordinate_sign(&s, 10), Sign::Minus);
        assert_eq!(coordinate_sign(&s, 5), Sign::Plus);
        let cancel = TrainingSet::from_instances([inst(3, 1), inst(3, -1)], &params).unwrap();
        assert_eq!(coordinate_sign(&cancel, 3), Sign::Plus);
    }

    #[test]
    fn predict_examples() {
        let params = params_n2();
        let s = TrainingSet::from_instances([inst(3, 1), inst(10, -1)], &params).unwrap();
        assert_eq!(
            predict(&s, inst(3, -1), &params),
            Prediction { index: 3, sign_hat: Sign::Plus }
        );
        assert_eq!(
            predict(&s, inst(5, 1), &params),
            Prediction { index: 5, sign_hat: Sign::Plus }
        );
        assert_eq!(predict(&s, inst(10, 1), &params).sign_hat, Sign::Minus);
    }

    #[test]
    fn loss_examples() {
        let params = params_n2();
        let pred = Prediction { index: 3, sign_hat: Sign::Plus };
        assert_eq!(loss(&pred, inst(3, 1), &params), 3.0);
        let pred = Prediction { index: 10, sign_hat: Sign::Plus };
        assert_eq!(loss(&pred, inst(10, -1), &params), 10.0);
        // different coordinates: g·σ(3) + lmax·σ(10)
        let pred = Prediction { index: 3, sign_hat: Sign::Minus };
        assert_eq!(loss(&pred, inst(10, 1), &params), 1.0 + 8.0);
    }

    #[test]
    fn loss_maximum_over_same_coordinate_pairs() {
        let params = params_n2();
        let mut max: f64 = 0.0;
        for i in 1..=params.d() {
            for sh in [Sign::Plus, Sign::Minus] {
                for sy in [Sign::Plus, Sign::Minus] {
                    let l = loss(&Prediction { index: i, sign_hat: sh }, Instance::new(i, sy), &params);
                    max = max.max(l);
                }
            }
        }
        assert_eq!(max, 2.0 * (params.lmax() + params.g()));
        assert!(max <= params.l_target());
    }

    #[test]
    fn training_set_validation() {
        let params = params_n2();
        assert!(matches!(
            TrainingSet::from_instances([inst(1, 1)], &params),
            Err(LabError::WrongSampleCount { got: 1, expected: 2 })
        ));
        assert!(TrainingSet::from_instances([inst(1, 1), inst(17, 1)], &params).is_err());
        assert!(Instance::checked(3, 0, &params).is_err());
        assert!(Instance::checked(3, -1, &params).is_ok());
    }

    fn arb_case() -> impl Strategy<Value = (ConstructionParams, Vec<Instance>, usize)> {
        (1usize..6, 0.01f64..1.0).prop_flat_map(|(n, ratio)| {
            let params = ConstructionParams::new(n, ratio, 1.0).unwrap();
            let d = params.d();
            let inst = (1..=d, any::<bool>()).prop_map(|(i, s)| {
                Instance::new(i, if s { Sign::Plus } else { Sign::Minus })
            });
            (Just(params), prop::collection::vec(inst, n), 1..=d)
        })
    }

    proptest! {
        #[test]
        fn predict_ignores_order_and_query_sign((params, xs, i) in arb_case()) {
            let s = TrainingSet::from_instances(xs.clone(), &params).unwrap();
            let mut rev = xs.clone();
            rev.reverse();
            let r = TrainingSet::from_instances(rev, &params).unwrap();
            let plus = predict(&s, Instance::new(i, Sign::Plus), &params);
            prop_assert_eq!(plus, predict(&s, Instance::new(i, Sign::Minus), &params));
            prop_assert_eq!(plus, predict(&r, Instance::new(i, Sign::Plus), &params));
            prop_assert_eq!(plus, predict_tallied(&s.tally(), Instance::new(i, Sign::Plus)));
        }

        #[test]
        fn paired_losses_sum_to_twice_the_scale((params, xs, i) in arb_case()) {
            let s = TrainingSet::from_instances(xs, &params).unwrap();
            let y = Instance::new(i, Sign::Plus);
            let pred = predict(&s, y, &params);
            let sum = loss(&pred, y, &params) + loss(&pred, y.flipped(), &params);
            let expected = 2.0 * params.lmax() * params.sigma(i) as f64;
            prop_assert!((sum - expected).abs() <= 1e-12 * expected);
            // prediction norm g·σ strictly inside (0, lmax·σ]
            let norm = params.g() * params.sigma(i) as f64;
            prop_assert!(norm > 0.0 && norm <= params.lmax() * params.sigma(i) as f64);
        }
    }
}

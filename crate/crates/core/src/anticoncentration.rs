//! Anti-concentration checks: the Paley–Zygmund inequality on finite
//! distributions, and the tail bound `P(Σ Xᵢ > √n/2) ≥ 3/32` for sums of
//! independent Rademacher variables, both exactly and by simulation.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rng::{derive_seed, stream};

/// Guaranteed lower bound on the Rademacher tail.
pub const RADEMACHER_TAIL_BOUND: f64 = 3.0 / 32.0;

/// Largest `n` handled by [`rademacher_tail_exact`].
pub const MAX_EXACT_N: usize = 1_000_000;

/// Up to this `n` the exact tail is computed with big-integer rationals.
pub const RATIONAL_N_LIMIT: usize = 64;

const MC_CHUNK: u64 = 4096;

/// Finitely supported non-negative random variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    support: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    /// `support` holds `(value, probability)` pairs.
    pub fn new(support: Vec<(f64, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(LabError::InvalidDistribution("empty support".into()));
        }
        let mut total = 0.0;
        for &(v, p) in &support {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LabError::InvalidDistribution(format!(
                    "values must be finite and non-negative, got {v}"
                )));
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(LabError::InvalidDistribution(format!(
                    "probabilities must be non-negative, got {p}"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::InvalidDistribution(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { support })
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        Self::new(vec![(value, 1.0)])
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::new(vec![(1.0, p), (0.0, 1.0 - p)])
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|&(v, p)| v * p).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.support.iter().map(|&(v, p)| v * v * p).sum()
    }

    /// `P(Z > t)`, strict.
    pub fn tail_above(&self, t: f64) -> f64 {
        self.support.iter().filter(|&&(v, _)| v > t).map(|&(_, p)| p).sum()
    }
}

/// Paley–Zygmund lower bound `(1−θ)²·E[Z]²/E[Z²]`.
pub fn paley_zygmund_bound(mean: f64, second_moment: f64, theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(LabError::Domain(format!("theta must lie in [0, 1], got {theta}")));
    }
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(LabError::Domain(format!("mean must be non-negative, got {mean}")));
    }
    if !(second_moment.is_finite() && second_moment > 0.0) {
        return Err(LabError::Domain(format!(
            "second moment must be positive, got {second_moment}"
        )));
    }
    let mean_sq = mean * mean;
    if second_moment < mean_sq * (1.0 - 1e-12) {
        return Err(LabError::Domain(format!(
            "second moment {second_moment} is below mean^2 {mean_sq}"
        )));
    }
    Ok((1.0 - theta).powi(2) * mean_sq / second_moment)
}

/// Outcome of one Paley–Zygmund check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaleyZygmundWitness {
    pub theta: f64,
    pub mean: f64,
    pub second_moment: f64,
    /// Exact `P(Z > θ·E[Z])`.
    pub tail: f64,
    pub bound: f64,
    pub satisfied: bool,
}

/// Compares the exact tail `P(Z > θ·E[Z])` with the Paley–Zygmund bound.
///
/// `satisfied` allows `1e-12` of rounding slack; a `false` here is a bug.
pub fn verify_paley_zygmund(dist: &DiscreteDistribution, theta: f64) -> Result<PaleyZygmundWitness> {
    let mean = dist.mean();
    let second_moment = dist.second_moment();
    let bound = paley_zygmund_bound(mean, second_moment, theta)?;
    let tail = dist.tail_above(theta * mean);
    Ok(PaleyZygmundWitness {
        theta,
        mean,
        second_moment,
        tail,
        bound,
        satisfied: tail >= bound - 1e-12,
    })
}

/// Whether a Rademacher sum `s` of `n` terms exceeds `√n/2`, decided in
/// integers: `s > 0 ∧ 4s² > n`.
#[inline]
pub fn exceeds_half_sqrt(s: i64, n: usize) -> bool {
    s > 0 && 4 * (s as i128) * (s as i128) > n as i128
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub n: usize,
    /// `P(Σ Xᵢ > √n/2)`.
    pub exact_tail: f64,
    pub bound: f64,
    pub satisfied: bool,
}

/// Exact tail `2⁻ⁿ·Σ_{k: 2k−n > √n/2} C(n,k)` as a big rational.
pub fn rademacher_tail_rational(n: usize) -> Result<BigRational> {
    if n == 0 {
        return Err(LabError::Domain("n must be positive".into()));
    }
    let mut binom = BigUint::one();
    let mut numer = BigUint::zero();
    for k in 0..=n {
        if exceeds_half_sqrt(2 * k as i64 - n as i64, n) {
            numer += &binom;
        }
        if k < n {
            binom = binom * BigUint::from(n - k) / BigUint::from(k + 1);
        }
    }
    let denom = BigUint::one() << n;
    Ok(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
}

/// Binomial tail by normalized ratio recurrence from the mode.
///
/// Every term is kept relative to `C(n, ⌊n/2⌋)` and divided by the sum of
/// all relative terms, which is the same normalization as `2ⁿ`. Terms below
/// `1e-30` of the mode are dropped.
fn rademacher_tail_ratio(n: usize) -> f64 {
    let mode = n / 2;
    let s = |k: usize| 2 * k as i64 - n as i64;
    let mut total = 1.0;
    let mut tail = if exceeds_half_sqrt(s(mode), n) { 1.0 } else { 0.0 };

    let mut t = 1.0;
    for k in mode..n {
        t *= (n - k) as f64 / (k + 1) as f64;
        if t < 1e-30 {
            break;
        }
        total += t;
        if exceeds_half_sqrt(s(k + 1), n) {
            tail += t;
        }
    }
    let mut t = 1.0;
    for k in (1..=mode).rev() {
        t *= k as f64 / (n - k + 1) as f64;
        if t < 1e-30 {
            break;
        }
        total += t;
        if exceeds_half_sqrt(s(k - 1), n) {
            tail += t;
        }
    }
    tail / total
}

/// Exact Rademacher tail for one `n`: rational arithmetic up to
/// [`RATIONAL_N_LIMIT`], normalized binomial recurrence above (relative
/// accuracy better than `1e-12`).
pub fn rademacher_tail_exact(n: usize) -> Result<TailReport> {
    if n == 0 {
        return Err(LabError::Domain("n must be positive".into()));
    }
    if n > MAX_EXACT_N {
        return Err(LabError::TooLargeToEnumerate {
            what: "binomial tail",
            size: n as u128,
            limit: MAX_EXACT_N as u128,
            fallback: "use rademacher_tail_montecarlo",
        });
    }
    let exact_tail = if n <= RATIONAL_N_LIMIT {
        rademacher_tail_rational(n)?
            .to_f64()
            .expect("a probability converts to f64")
    } else {
        rademacher_tail_ratio(n)
    };
    Ok(TailReport {
        n,
        exact_tail,
        bound: RADEMACHER_TAIL_BOUND,
        satisfied: exact_tail >= RADEMACHER_TAIL_BOUND,
    })
}

/// Sum of `n` fresh Rademacher draws.
pub fn rademacher_sum<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> i64 {
    let mut plus = 0u32;
    let mut left = n;
    while left >= 64 {
        plus += rng.next_u64().count_ones();
        left -= 64;
    }
    if left > 0 {
        plus += (rng.next_u64() & ((1u64 << left) - 1)).count_ones();
    }
    2 * plus as i64 - n as i64
}

/// Frequency estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub n: usize,
    pub trials: u64,
    pub hits: u64,
    pub estimate: f64,
    pub stderr: f64,
}

fn chunk_plan(trials: u64) -> impl ParallelIterator<Item = (u64, u64)> {
    let chunks = trials.div_ceil(MC_CHUNK);
    (0..chunks).into_par_iter().map(move |c| {
        let start = c * MC_CHUNK;
        (c, (trials - start).min(MC_CHUNK))
    })
}

/// Simulated frequency of `{Σ Xᵢ > √n/2}`.
///
/// The stream only provides a base seed; trials run in fixed chunks with
/// derived sub-streams, so the estimate is independent of the worker count.
pub fn rademacher_tail_montecarlo<R: RngCore + ?Sized>(
    n: usize,
    trials: u64,
    rng: &mut R,
) -> Result<TailEstimate> {
    if n == 0 {
        return Err(LabError::Domain("n must be positive".into()));
    }
    if trials < 1_000 {
        return Err(LabError::Domain(format!("need at least 1000 trials, got {trials}")));
    }
    let base = rng.next_u64();
    let hits: u64 = chunk_plan(trials)
        .map(|(c, len)| {
            let mut r = stream(derive_seed(base, c));
            (0..len)
                .filter(|_| exceeds_half_sqrt(rademacher_sum(n, &mut r), n))
                .count() as u64
        })
        .sum();
    let estimate = hits as f64 / trials as f64;
    Ok(TailEstimate {
        n,
        trials,
        hits,
        estimate,
        stderr: (estimate * (1.0 - estimate) / trials as f64).sqrt(),
    })
}

/// Simulated `E[S²]`, `E[S⁴]` against `n` and `n + 3n(n−1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub n: usize,
    pub trials: u64,
    pub mean_s2: f64,
    pub mean_s4: f64,
    pub target_s2: f64,
    pub target_s4: f64,
    pub stderr_s2: f64,
    pub stderr_s4: f64,
    pub z_s2: f64,
    pub z_s4: f64,
}

impl MomentReport {
    pub fn within(&self, sigmas: f64) -> bool {
        self.z_s2.abs() <= sigmas && self.z_s4.abs() <= sigmas
    }
}

pub fn rademacher_second_moment(n: usize) -> f64 {
    n as f64
}

pub fn rademacher_fourth_moment(n: usize) -> f64 {
    let n = n as f64;
    n + 3.0 * n * (n - 1.0)
}

#[derive(Default, Clone, Copy)]
struct MomentSums {
    s2: u128,
    s4: u128,
    s8: f64,
}

pub fn rademacher_moment_check<R: RngCore + ?Sized>(
    n: usize,
    trials: u64,
    rng: &mut R,
) -> Result<MomentReport> {
    if n == 0 {
        return Err(LabError::Domain("n must be positive".into()));
    }
    if n > 100_000 {
        return Err(LabError::Domain(format!("n={n} too large for integer moment sums")));
    }
    if trials < 10_000 {
        return Err(LabError::Domain(format!("need at least 10000 trials, got {trials}")));
    }
    let base = rng.next_u64();
    let parts: Vec<MomentSums> = chunk_plan(trials)
        .map(|(c, len)| {
            let mut r = stream(derive_seed(base, c));
            let mut acc = MomentSums::default();
            for _ in 0..len {
                let s = rademacher_sum(n, &mut r) as i128;
                let s2 = (s * s) as u128;
                let s4 = s2 * s2;
                acc.s2 += s2;
                acc.s4 += s4;
                acc.s8 += (s4 as f64) * (s4 as f64);
            }
            acc
        })
        .collect();
    let sums = parts.iter().fold(MomentSums::default(), |a, b| MomentSums {
        s2: a.s2 + b.s2,
        s4: a.s4 + b.s4,
        s8: a.s8 + b.s8,
    });
    let t = trials as f64;
    let mean_s2 = sums.s2 as f64 / t;
    let mean_s4 = sums.s4 as f64 / t;
    // E[S⁴] is the second moment of S², so it doubles as var(S²) input.
    let var_s2 = (mean_s4 - mean_s2 * mean_s2).max(0.0);
    let var_s4 = (sums.s8 / t - mean_s4 * mean_s4).max(0.0);
    let stderr_s2 = (var_s2 / t).sqrt();
    let stderr_s4 = (var_s4 / t).sqrt();
    let target_s2 = rademacher_second_moment(n);
    let target_s4 = rademacher_fourth_moment(n);
    let z = |mean: f64, target: f64, se: f64| {
        if se > 0.0 {
            (mean - target) / se
        } else if mean == target {
            0.0
        } else {
            f64::INFINITY
        }
    };
    Ok(MomentReport {
        n,
        trials,
        mean_s2,
        mean_s4,
        target_s2,
        target_s4,
        stderr_s2,
        stderr_s4,
        z_s2: z(mean_s2, target_s2, stderr_s2),
        z_s4: z(mean_s4, target_s4, stderr_s4),
    })
}

/// Draws a random finite distribution with at most `max_support` atoms on
/// `[0, 10)`; used for property sweeps of the Paley–Zygmund check.
pub fn random_distribution<R: Rng + ?Sized>(max_support: usize, rng: &mut R) -> DiscreteDistribution {
    let size = rng.random_range(1..=max_support.max(1));
    let mut values: Vec<f64> = (0..size)
        .map(|_| {
            // occasional exact zeros and repeated atoms
            if rng.random_bool(0.15) {
                0.0
            } else {
                rng.random_range(0.0..10.0)
            }
        })
        .collect();
    if values.iter().all(|&v| v == 0.0) {
        values[0] = 1.0;
    }
    let weights: Vec<f64> = (0..size).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut support: Vec<(f64, f64)> = values
        .into_iter()
        .zip(weights)
        .map(|(v, w)| (v, w / total))
        .collect();
    // absorb rounding in the last atom
    let sum_head: f64 = support[..size - 1].iter().map(|a| a.1).sum();
    support[size - 1].1 = (1.0 - sum_head).max(0.0);
    DiscreteDistribution::new(support).expect("normalized weights form a distribution")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn bound_examples() {
        let c = 3.5;
        assert_eq!(paley_zygmund_bound(c, c * c, 0.0).unwrap(), 1.0);
        let p = 0.3;
        assert!((paley_zygmund_bound(p, p, 0.5).unwrap() - p / 4.0).abs() < 1e-15);
        assert_eq!(paley_zygmund_bound(2.0, 5.0, 1.0).unwrap(), 0.0);
        assert!(paley_zygmund_bound(1.0, 0.0, 0.5).is_err());
        assert!(paley_zygmund_bound(1.0, 2.0, 1.5).is_err());
        assert!(paley_zygmund_bound(1.0, 2.0, -0.1).is_err());
        assert!(paley_zygmund_bound(2.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn verify_examples() {
        let w = verify_paley_zygmund(&DiscreteDistribution::bernoulli(0.3).unwrap(), 0.5).unwrap();
        assert!(w.satisfied);
        assert!((w.tail - 0.3).abs() < 1e-15);
        assert!((w.bound - 0.075).abs() < 1e-15);

        let w = verify_paley_zygmund(&DiscreteDistribution::point_mass(5.0).unwrap(), 0.0).unwrap();
        assert!(w.satisfied);
        assert_eq!(w.tail, 1.0);
        assert_eq!(w.bound, 1.0);

        // uniform on {0,1,2,3}: E = 3/2, E² = 7/2, θE = 1.35 → tail 1/2
        let u = DiscreteDistribution::new((0..4).map(|v| (v as f64, 0.25)).collect()).unwrap();
        let w = verify_paley_zygmund(&u, 0.9).unwrap();
        assert!(w.satisfied);
        assert_eq!(w.tail, 0.5);
        assert!((w.bound - 0.01 * 2.25 / 3.5).abs() < 1e-15);
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::new(vec![]).is_err());
        assert!(DiscreteDistribution::new(vec![(-1.0, 1.0)]).is_err());
        assert!(DiscreteDistribution::new(vec![(1.0, 0.5)]).is_err());
        assert!(DiscreteDistribution::new(vec![(1.0, 1.5), (2.0, -0.5)]).is_err());
    }

    #[test]
    fn random_distributions_satisfy_the_inequality() {
        let mut rng = stream(77);
        for _ in 0..2_000 {
            let dist = random_distribution(16, &mut rng);
            for theta in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
                let w = verify_paley_zygmund(&dist, theta).unwrap();
                assert!(w.satisfied, "{dist:?} {w:?}");
            }
        }
    }

    #[test]
    fn integer_threshold() {
        // n = 4: need s > 1
        assert!(!exceeds_half_sqrt(0, 4));
        assert!(!exceeds_half_sqrt(1, 4));
        assert!(exceeds_half_sqrt(2, 4));
        // n = 16: √n/2 = 2 exactly; s = 2 is not strictly above
        assert!(!exceeds_half_sqrt(2, 16));
        assert!(exceeds_half_sqrt(4, 16));
        assert!(!exceeds_half_sqrt(-4, 16));
        assert!(exceeds_half_sqrt(1, 1));
        assert!(exceeds_half_sqrt(1, 3));
    }

    #[test]
    fn exact_tail_examples() {
        assert_eq!(rademacher_tail_exact(1).unwrap().exact_tail, 0.5);
        assert_eq!(rademacher_tail_exact(4).unwrap().exact_tail, 5.0 / 16.0);
        assert_eq!(
            rademacher_tail_rational(4).unwrap(),
            BigRational::new(BigInt::from(5), BigInt::from(16))
        );
        let r = rademacher_tail_exact(100).unwrap();
        assert!(r.satisfied && r.exact_tail >= 0.09375);
        assert!(rademacher_tail_exact(0).is_err());
        assert!(matches!(
            rademacher_tail_exact(MAX_EXACT_N + 1),
            Err(LabError::TooLargeToEnumerate { .. })
        ));
    }

    #[test]
    fn ratio_recurrence_matches_rationals() {
        for n in [1usize, 2, 5, 17, 64, 65, 100, 257, 1000, 3001] {
            let exact = rademacher_tail_rational(n).unwrap().to_f64().unwrap();
            let ratio = rademacher_tail_ratio(n);
            assert!((exact - ratio).abs() <= 1e-12 * exact, "n={n}: {exact} vs {ratio}");
        }
    }

    #[test]
    fn large_n_exact_tail() {
        let r = rademacher_tail_exact(MAX_EXACT_N).unwrap();
        assert!(r.satisfied);
        // tends to P(N(0,1) > 1/2) ≈ 0.3085
        assert!((r.exact_tail - 0.3085).abs() < 0.01);
    }

    #[test]
    fn montecarlo_examples() {
        let est = rademacher_tail_montecarlo(4, 1_000_000, &mut stream(1)).unwrap();
        assert!((est.estimate - 5.0 / 16.0).abs() < 5.0 * est.stderr, "{est:?}");

        let est = rademacher_tail_montecarlo(10_000, 100_000, &mut stream(2)).unwrap();
        assert!(est.estimate >= RADEMACHER_TAIL_BOUND - 5.0 * est.stderr);

        let a = rademacher_tail_montecarlo(37, 5_000, &mut stream(3)).unwrap();
        let b = rademacher_tail_montecarlo(37, 5_000, &mut stream(3)).unwrap();
        assert_eq!(a, b);
        assert!(rademacher_tail_montecarlo(4, 999, &mut stream(3)).is_err());
    }

    #[test]
    fn montecarlo_is_worker_count_independent() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| rademacher_tail_montecarlo(25, 50_000, &mut stream(8)).unwrap());
        let b = four.install(|| rademacher_tail_montecarlo(25, 50_000, &mut stream(8)).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn moment_targets() {
        assert_eq!(rademacher_second_moment(1), 1.0);
        assert_eq!(rademacher_fourth_moment(1), 1.0);
        assert_eq!(rademacher_second_moment(10), 10.0);
        assert_eq!(rademacher_fourth_moment(10), 280.0);
        for n in 1..50 {
            assert_eq!(rademacher_fourth_moment(n), (3 * n * n - 2 * n) as f64);
        }
    }

    #[test]
    fn moments_within_five_standard_errors() {
        for n in [1usize, 10, 65] {
            let r = rademacher_moment_check(n, 200_000, &mut stream(n as u64)).unwrap();
            assert!(r.within(5.0), "{r:?}");
        }
        // n = 1: S² ≡ S⁴ ≡ 1, zero variance
        let r = rademacher_moment_check(1, 10_000, &mut stream(0)).unwrap();
        assert_eq!((r.mean_s2, r.mean_s4, r.z_s2, r.z_s4), (1.0, 1.0, 0.0, 0.0));
        assert!(rademacher_moment_check(3, 100, &mut stream(0)).is_err());
    }

    #[test]
    fn rademacher_sum_parity_and_range() {
        let mut rng = stream(4);
        for n in [1usize, 63, 64, 65, 130] {
            for _ in 0..100 {
                let s = rademacher_sum(n, &mut rng);
                assert!(s.unsigned_abs() as usize <= n);
                assert_eq!((s - n as i64).rem_euclid(2), 0);
            }
        }
    }
}

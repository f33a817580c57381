//! Seeded Monte Carlo runs of the full pipeline: sample a training set,
//! measure its generalization gap, and track the orthogonality (E₁) and
//! imbalance (E₂) events that force the gap above threshold.
//!
//! Trial `k` of a run uses the stream seeded by `derive_seed(master, k)`.
//! Trials are grouped in fixed chunks; each chunk sums its gaps in trial
//! order and chunks are combined in chunk order, so a report is
//! bit-identical for any number of workers.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::{ConstructionParams, TrainingSet};
use crate::error::{LabError, Result};
use crate::risk::{empirical_risk_orthogonal, generalization_gap, sigma_sum};
use crate::rng::{derive_seed, stream};

/// Absolute slack when comparing a gap with its threshold.
pub const GAP_TOLERANCE: f64 = 1e-12;

/// Two-sided 95% normal quantile used for report intervals.
pub const CI_Z: f64 = 1.959_963_984_540_054;

const TRIAL_CHUNK: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub gap: f64,
    pub e1: bool,
    pub e2: bool,
    pub gap_event: bool,
    pub sigma_sum: u64,
}

/// All training inputs lie on pairwise distinct axes.
pub fn detect_e1(train: &TrainingSet) -> bool {
    train.tally().distinct_indices() == train.len()
}

/// Short inputs outnumber long ones by strictly more than `√n/2`.
pub fn detect_e2(train: &TrainingSet, params: &ConstructionParams) -> bool {
    let long = train
        .inputs()
        .filter(|x| params.sigma(x.index) == 2)
        .count() as i64;
    let short = train.len() as i64 - long;
    let margin = short - long;
    margin > 0 && 4 * margin * margin > params.n() as i64
}

/// One trial: draw `S`, compute its gap and event flags, and check the
/// deterministic core: under E₁ the empirical risk equals
/// `(lmax − g)·Σσ/n` exactly, and E₁ ∧ E₂ forces the gap event.
pub fn run_trial<R: Rng + ?Sized>(params: &ConstructionParams, rng: &mut R) -> Result<TrialResult> {
    let train = TrainingSet::sample(params, rng);
    let risk = generalization_gap(&train, params);
    let e1 = detect_e1(&train);
    let e2 = detect_e2(&train, params);
    let sigma_sum = sigma_sum(&train, params);
    let threshold = params.gap_threshold();
    let gap_event = risk.gap >= threshold - GAP_TOLERANCE;

    if e1 {
        let closed = empirical_risk_orthogonal(sigma_sum, params);
        if closed != risk.empirical {
            return Err(LabError::InvariantViolation {
                seed: None,
                detail: format!(
                    "orthogonal sample: empirical risk {} differs from closed form {}",
                    risk.empirical, closed
                ),
            });
        }
    }
    if e1 && e2 && !gap_event {
        return Err(LabError::InvariantViolation {
            seed: None,
            detail: format!("E1 and E2 hold but gap {} < threshold {}", risk.gap, threshold),
        });
    }
    Ok(TrialResult {
        gap: risk.gap,
        e1,
        e2,
        gap_event,
        sigma_sum,
    })
}

/// [`run_trial`] on the stream of `seed`; violations carry the seed.
pub fn run_trial_seeded(params: &ConstructionParams, seed: u64) -> Result<TrialResult> {
    run_trial(params, &mut stream(seed)).map_err(|e| match e {
        LabError::InvariantViolation { detail, .. } => LabError::InvariantViolation {
            seed: Some(seed),
            detail,
        },
        other => other,
    })
}

/// Seed of trial `k` under `master_seed`.
pub fn trial_seed(master_seed: u64, k: u64) -> u64 {
    derive_seed(master_seed, k)
}

/// A frequency with its normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub count: u64,
    pub total: u64,
    pub freq: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Proportion {
    pub fn new(count: u64, total: u64) -> Self {
        if total == 0 {
            return Self {
                count,
                total,
                freq: f64::NAN,
                stderr: f64::NAN,
                ci_lo: 0.0,
                ci_hi: 1.0,
            };
        }
        let freq = count as f64 / total as f64;
        let stderr = (freq * (1.0 - freq) / total as f64).sqrt();
        Self {
            count,
            total,
            freq,
            stderr,
            ci_lo: (freq - CI_Z * stderr).max(0.0),
            ci_hi: (freq + CI_Z * stderr).min(1.0),
        }
    }

    /// One-sided check `freq ≥ floor − sigmas·stderr`.
    pub fn at_least(&self, floor: f64, sigmas: f64) -> bool {
        self.total > 0 && self.freq >= floor - sigmas * self.stderr
    }

    /// Two-sided check `|freq − target| ≤ sigmas·stderr`, with the
    /// standard error taken at the target.
    pub fn matches(&self, target: f64, sigmas: f64) -> bool {
        let se = (target * (1.0 - target) / self.total as f64).sqrt();
        (self.freq - target).abs() <= sigmas * se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n: usize,
    pub gamma: f64,
    pub l: f64,
    pub trials: u64,
    pub seed: u64,
    pub threshold: f64,
    pub gap_event: Proportion,
    pub e1: Proportion,
    pub e2: Proportion,
    pub e1_and_e2: Proportion,
    /// Over trials where E₂ holds.
    pub e1_given_e2: Proportion,
    pub mean_gap: f64,
    pub mean_sigma: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counters {
    gap_event: u64,
    e1: u64,
    e2: u64,
    e1_and_e2: u64,
    sigma_total: u64,
    gap_sum: f64,
}

fn run_chunk(params: &ConstructionParams, master_seed: u64, start: u64, len: u64) -> Result<Counters> {
    let mut c = Counters::default();
    for k in start..start + len {
        let t = run_trial_seeded(params, trial_seed(master_seed, k))?;
        c.gap_event += u64::from(t.gap_event);
        c.e1 += u64::from(t.e1);
        c.e2 += u64::from(t.e2);
        c.e1_and_e2 += u64::from(t.e1 && t.e2);
        c.sigma_total += t.sigma_sum;
        c.gap_sum += t.gap;
    }
    Ok(c)
}

/// Runs `trials` seeded trials on the current rayon pool and aggregates them.
pub fn estimate_probabilities(
    params: &ConstructionParams,
    trials: u64,
    master_seed: u64,
) -> Result<ExperimentReport> {
    if trials < 1_000 {
        return Err(LabError::Domain(format!("need at least 1000 trials, got {trials}")));
    }
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let parts: Vec<Result<Counters>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * TRIAL_CHUNK;
            run_chunk(params, master_seed, start, (trials - start).min(TRIAL_CHUNK))
        })
        .collect();
    let mut total = Counters::default();
    for part in parts {
        let p = part?;
        total.gap_event += p.gap_event;
        total.e1 += p.e1;
        total.e2 += p.e2;
        total.e1_and_e2 += p.e1_and_e2;
        total.sigma_total += p.sigma_total;
        total.gap_sum += p.gap_sum;
    }
    Ok(ExperimentReport {
        n: params.n(),
        gamma: params.gamma_target(),
        l: params.l_target(),
        trials,
        seed: master_seed,
        threshold: params.gap_threshold(),
        gap_event: Proportion::new(total.gap_event, trials),
        e1: Proportion::new(total.e1, trials),
        e2: Proportion::new(total.e2, trials),
        e1_and_e2: Proportion::new(total.e1_and_e2, trials),
        e1_given_e2: Proportion::new(total.e1_and_e2, total.e2),
        mean_gap: total.gap_sum / trials as f64,
        mean_sigma: total.sigma_total as f64 / (trials as f64 * params.n() as f64),
    })
}

/// Probability that `n` uniform draws over `d` axes are pairwise distinct,
/// `Π_{k<n} (1 − k/d)`.
pub fn e1_probability_exact(params: &ConstructionParams) -> f64 {
    let d = params.d() as f64;
    (0..params.n()).map(|k| 1.0 - k as f64 / d).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundQuery {
    pub n: usize,
    pub gamma: f64,
    pub l: f64,
    /// Failure probability.
    pub delta: f64,
}

/// Known high-probability upper bounds on the gap for γ-stable rules with
/// every hidden constant set to 1. Reference-only: the true constants are
/// unknown, so only the shape in `n` is meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundReference {
    /// `√n·γ·√log(1/δ) + (L/√n)·√log(1/δ)`
    pub classic: f64,
    /// `γ(log n)² + γ·log n·log(1/δ) + (L/√n)·√log(1/δ)`
    pub log_squared: f64,
    /// `γ·log n·log(1/δ) + (L/√n)·√log(1/δ)`
    pub sharpened: f64,
}

pub fn upper_bound_reference(q: &UpperBoundQuery) -> Result<UpperBoundReference> {
    if q.n == 0 {
        return Err(LabError::InvalidParams {
            field: "n",
            reason: "must be at least 1".into(),
        });
    }
    if !(q.delta > 0.0 && q.delta < 1.0) {
        return Err(LabError::InvalidParams {
            field: "delta",
            reason: format!("must lie in (0, 1), got {}", q.delta),
        });
    }
    if !(q.gamma >= 0.0 && q.l >= 0.0) {
        return Err(LabError::InvalidParams {
            field: "gamma",
            reason: "gamma and l must be non-negative".into(),
        });
    }
    let n = q.n as f64;
    let log_inv_delta = (1.0 / q.delta).ln();
    let log_n = n.ln();
    let loss_term = q.l / n.sqrt() * log_inv_delta.sqrt();
    Ok(UpperBoundReference {
        classic: n.sqrt() * q.gamma * log_inv_delta.sqrt() + loss_term,
        log_squared: q.gamma * log_n * log_n + q.gamma * log_n * log_inv_delta + loss_term,
        sharpened: q.gamma * log_n * log_inv_delta + loss_term,
    })
}

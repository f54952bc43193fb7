//! Discrepancy metrics, policy bounds, and Monte-Carlo verification.
//!
//! The per-slot discrepancy `psi_t` sums the squared gaps between cached and
//! long-term label distributions over all clients and classes. Each policy
//! carries an upper bound `lambda_t^2` on the expected per-class squared gap,
//! parameterized by the stream's correlation horizon and covariance level;
//! [`monte_carlo_discrepancy`] checks the bounds empirically with count-only
//! simulations.

use rayon::prelude::*;

use crate::cache::{apportion, CacheConfig, CountCache, PolicyConfig};
use crate::dist::{sample_categorical, sample_multinomial, LabelDistribution, RegimeSet};
use crate::error::{Error, Result};
use crate::rng::{substream, StreamTag};

/// Per-round discrepancy telemetry.
#[derive(Debug, Clone)]
pub struct DiscrepancyRecord {
    pub round: u64,
    pub psi_t: f64,
    /// `(v^{k,r} - pi^{k,r})^2` per client, per class.
    pub per_client_sq: Vec<Vec<f64>>,
}

impl DiscrepancyRecord {
    pub fn new(
        round: u64,
        v_all: &[LabelDistribution],
        pi_all: &[LabelDistribution],
    ) -> Result<Self> {
        if v_all.len() != pi_all.len() {
            return Err(Error::DimensionMismatch {
                left: v_all.len(),
                right: pi_all.len(),
            });
        }
        let mut per_client_sq = Vec::with_capacity(v_all.len());
        for (v, pi) in v_all.iter().zip(pi_all) {
            if v.len() != pi.len() {
                return Err(Error::DimensionMismatch {
                    left: v.len(),
                    right: pi.len(),
                });
            }
            per_client_sq.push(
                v.probs()
                    .iter()
                    .zip(pi.probs())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .collect(),
            );
        }
        let psi_t = per_client_sq.iter().flatten().sum();
        Ok(Self {
            round,
            psi_t,
            per_client_sq,
        })
    }
}

/// Per-slot discrepancy `psi_t = sum_k sum_r (v^{k,r} - pi^{k,r})^2`.
pub fn per_slot_discrepancy(
    v_all: &[LabelDistribution],
    pi_all: &[LabelDistribution],
) -> Result<f64> {
    Ok(DiscrepancyRecord::new(0, v_all, pi_all)?.psi_t)
}

/// Accumulated discrepancy `psi = sum_t psi_t`.
pub fn accumulated_discrepancy<I: IntoIterator<Item = f64>>(psi_series: I) -> f64 {
    psi_series.into_iter().sum()
}

/// Arguments of the policy bound evaluators.
#[derive(Debug, Clone, Copy)]
pub struct BoundInput {
    /// Cache capacity in batches, `M = B / B_s`.
    pub m: usize,
    /// Correlation horizon of the stream.
    pub gamma: usize,
    /// Covariance level of the stream.
    pub delta_sq: f64,
    /// Replacement weight (SRSR).
    pub theta: f64,
    /// Round index.
    pub t: u64,
    /// `max_r (pi^{k,r})^2`, the initial-condition term of the SRSR bound.
    pub pi_max_sq: f64,
}

/// FIFO discrepancy bound `min(2*gamma + 1, M) * delta^2 / M`.
pub fn fifo_bound(input: &BoundInput) -> f64 {
    assert!(input.m >= 1, "FIFO bound requires M >= 1");
    let window = (2 * input.gamma + 1).min(input.m) as f64;
    window / input.m as f64 * input.delta_sq
}

fn srsr_ratio(input: &BoundInput) -> Result<f64> {
    let ratio = input.theta / input.m as f64;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "theta/M must lie in (0, 1), got {ratio}"
        )));
    }
    Ok(ratio)
}

/// SRSR discrepancy bound at round `t`: a decaying initial-condition term
/// plus the steady-state covariance term.
pub fn srsr_bound(input: &BoundInput) -> Result<f64> {
    let ratio = srsr_ratio(input)?;
    let q = 1.0 - ratio;
    let decay = q.powf(2.0 * input.t as f64);
    let bracket = (q.powi(-(input.gamma as i32)) - q.powi(input.gamma as i32 + 1)) / (2.0 - ratio);
    Ok(2.0 * decay * input.pi_max_sq + 2.0 * (1.0 - decay) * bracket * input.delta_sq)
}

/// Limit of [`srsr_bound`] as `t` grows.
pub fn srsr_bound_limit(input: &BoundInput) -> Result<f64> {
    let ratio = srsr_ratio(input)?;
    let q = 1.0 - ratio;
    let bracket = (q.powi(-(input.gamma as i32)) - q.powi(input.gamma as i32 + 1)) / (2.0 - ratio);
    Ok(2.0 * bracket * input.delta_sq)
}

/// DRSR discrepancy bound `(2*gamma + 1) * delta^2 / t`.
pub fn drsr_bound(input: &BoundInput) -> Result<f64> {
    if input.t < 1 {
        return Err(Error::InvalidParameter("round index must be >= 1".into()));
    }
    Ok((2 * input.gamma + 1) as f64 * input.delta_sq / input.t as f64)
}

/// Configuration of one Monte-Carlo discrepancy estimate.
#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub policy: PolicyConfig,
    pub cache: CacheConfig,
    /// Round at which the cached distribution is probed.
    pub t_probe: u64,
    pub n_trials: usize,
    /// Replace multinomial batch draws with deterministic proportional
    /// counts (the large-batch limit).
    pub exact_counts: bool,
    pub seed: u64,
}

/// Per-class Monte-Carlo estimate of `E[(v^r - pi^r)^2]` with standard errors.
#[derive(Debug, Clone)]
pub struct MonteCarloEstimate {
    pub per_class_mean: Vec<f64>,
    pub per_class_se: Vec<f64>,
}

impl MonteCarloEstimate {
    /// Class with the largest estimate, as `(class, mean, se)`.
    pub fn max_class(&self) -> (usize, f64, f64) {
        let mut best = 0;
        for (r, &m) in self.per_class_mean.iter().enumerate() {
            if m > self.per_class_mean[best] {
                best = r;
            }
        }
        (best, self.per_class_mean[best], self.per_class_se[best])
    }
}

fn run_trial(
    regime_set: &RegimeSet,
    mc: &MonteCarloConfig,
    pi: &LabelDistribution,
    trial: usize,
) -> Result<Vec<f64>> {
    let mut rng = substream(mc.seed, trial as u32, StreamTag::Trial);
    let num_classes = regime_set.num_classes();
    let batch_size = mc.cache.batch_size;
    let full_caps = vec![batch_size as u64; num_classes];
    let mut regime = sample_categorical(&mut rng, &regime_set.stationary);
    let mut cache = CountCache::new(mc.cache, mc.policy, num_classes);
    for _ in 0..mc.t_probe {
        regime = sample_categorical(&mut rng, regime_set.transition_row(regime));
        let probs = regime_set.regimes[regime].probs();
        let counts = if mc.exact_counts {
            let targets: Vec<f64> = probs.iter().map(|&p| p * batch_size as f64).collect();
            apportion(&targets, batch_size as u64, &full_caps)?
        } else {
            sample_multinomial(&mut rng, probs, batch_size)
        };
        cache.apply_batch(&counts)?;
    }
    let v = cache.cached_distribution()?;
    Ok((0..num_classes)
        .map(|r| {
            let d = v[r] - pi[r];
            d * d
        })
        .collect())
}

/// Estimates `E[(v^r_t - pi^r)^2]` per class by independent count-only
/// simulations of the stream and cache policy.
///
/// Trials run in parallel on per-trial RNG substreams; the reduction is
/// sequential in trial order, so results are independent of scheduling.
pub fn monte_carlo_discrepancy(
    regime_set: &RegimeSet,
    mc: &MonteCarloConfig,
) -> Result<MonteCarloEstimate> {
    if mc.n_trials < 100 {
        return Err(Error::InvalidParameter(format!(
            "need at least 100 trials for stable standard errors, got {}",
            mc.n_trials
        )));
    }
    if mc.t_probe < 1 {
        return Err(Error::InvalidParameter("t_probe must be >= 1".into()));
    }
    let pi = regime_set.long_term()?;
    let trials: Vec<Vec<f64>> = (0..mc.n_trials)
        .into_par_iter()
        .map(|i| run_trial(regime_set, mc, &pi, i))
        .collect::<Result<_>>()?;

    let num_classes = regime_set.num_classes();
    let n = mc.n_trials as f64;
    let mut mean = vec![0.0; num_classes];
    for t in &trials {
        for (m, &x) in mean.iter_mut().zip(t) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut se = vec![0.0; num_classes];
    for t in &trials {
        for ((s, &x), &m) in se.iter_mut().zip(t).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    for s in se.iter_mut() {
        *s = (*s / (n - 1.0) / n).sqrt();
    }
    Ok(MonteCarloEstimate {
        per_class_mean: mean,
        per_class_se: se,
    })
}

//! Label distributions and non-stationary stream generation.
//!
//! A client's stream is driven by a Markov chain over a set of regimes
//! (short-term label distributions). Transition probabilities are a softmax
//! of negative symmetrized KL divergence, so similar regimes are more likely
//! to follow each other. The long-term distribution is the stationary mixture
//! of the regimes.

use rand::Rng;
use rand_distr::{Distribution as _, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Tolerance for the sum-to-one invariant.
pub const DIST_SUM_TOL: f64 = 1e-12;
/// Zero entries are replaced by this mass before KL computations.
pub const KL_EPSILON: f64 = 1e-9;
/// Residual threshold for the stationary-distribution power iteration.
pub const STATIONARY_TOL: f64 = 1e-12;
/// Iteration cap for the power iteration.
pub const STATIONARY_MAX_ITERS: u64 = 1_000_000;
/// A lag's autocovariance counts as nonzero if it exceeds
/// `CORRELATION_NOISE_FACTOR / sqrt(series_len)` times the lag-0 value.
pub const CORRELATION_NOISE_FACTOR: f64 = 3.0;

/// A probability vector over label classes.
///
/// Entries are non-negative and sum to one within [`DIST_SUM_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    /// Validates and wraps a probability vector.
    pub fn try_new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {p} is negative or non-finite"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DIST_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// The uniform distribution over `n` classes.
    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Empirical distribution of integer class counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidDistribution("all counts are zero".into()));
        }
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self { probs })
    }

    /// Normalizes an arbitrary non-negative weight vector.
    pub(crate) fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidDistribution(
                "weights sum to zero".into(),
            ));
        }
        Ok(Self {
            probs: weights.iter().map(|w| w / sum).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Replaces zero entries with `epsilon` and renormalizes.
    pub fn smoothed(&self, epsilon: f64) -> Self {
        let raised: Vec<f64> = self
            .probs
            .iter()
            .map(|&p| if p == 0.0 { epsilon } else { p })
            .collect();
        Self::from_weights(&raised).expect("smoothed weights are positive")
    }
}

impl std::ops::Index<usize> for LabelDistribution {
    type Output = f64;
    fn index(&self, r: usize) -> &f64 {
        &self.probs[r]
    }
}

impl TryFrom<Vec<f64>> for LabelDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::try_new(v)
    }
}

impl From<LabelDistribution> for Vec<f64> {
    fn from(d: LabelDistribution) -> Vec<f64> {
        d.probs
    }
}

/// Kullback-Leibler divergence `KL(p || q)` in nats.
///
/// Terms with `p_r = 0` contribute zero. `q` must carry mass wherever `p`
/// does; smooth sparse distributions with [`LabelDistribution::smoothed`]
/// first.
pub fn kl_divergence(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut sum = 0.0;
    for (&pr, &qr) in p.probs.iter().zip(&q.probs) {
        if pr == 0.0 {
            continue;
        }
        if qr == 0.0 {
            return Err(Error::InvalidDistribution(
                "q has zero mass where p is positive; smooth q first".into(),
            ));
        }
        sum += pr * (pr / qr).ln();
    }
    // Rounding can push the sum a hair below zero for near-equal inputs.
    Ok(sum.max(0.0))
}

/// Symmetrized KL divergence `(KL(a||b) + KL(b||a)) / 2`.
pub fn symmetric_kl(a: &LabelDistribution, b: &LabelDistribution) -> Result<f64> {
    Ok(0.5 * (kl_divergence(a, b)? + kl_divergence(b, a)?))
}

/// Draws `num_regimes` label distributions over `num_classes` classes from a
/// symmetric Dirichlet with the given concentration.
///
/// `concentration = f64::INFINITY` selects the analytic limit: every regime
/// is uniform.
pub fn build_regimes(
    rng: &mut SimRng,
    num_classes: usize,
    num_regimes: usize,
    concentration: f64,
) -> Result<Vec<LabelDistribution>> {
    if num_classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if num_regimes == 0 {
        return Err(Error::InvalidParameter("need at least 1 regime".into()));
    }
    if !(concentration > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "concentration must be positive, got {concentration}"
        )));
    }
    if concentration.is_infinite() {
        return Ok(vec![LabelDistribution::uniform(num_classes); num_regimes]);
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::InvalidParameter(format!("dirichlet concentration: {e}")))?;
    let mut regimes = Vec::with_capacity(num_regimes);
    while regimes.len() < num_regimes {
        let draws: Vec<f64> = (0..num_classes).map(|_| gamma.sample(rng)).collect();
        // All-zero draws are possible for very small concentrations; redraw.
        match LabelDistribution::from_weights(&draws) {
            Ok(d) => regimes.push(d),
            Err(_) => continue,
        }
    }
    Ok(regimes)
}

/// Builds the row-stochastic regime transition matrix (row-major).
///
/// Entry `(i, j)` is the softmax over `j` of `-beta * KLsym(d_i, d_j)`, so a
/// regime is more likely to transition to regimes it diverges less from.
pub fn build_transition_matrix(regimes: &[LabelDistribution], beta: f64) -> Result<Vec<f64>> {
    if regimes.is_empty() {
        return Err(Error::InvalidParameter("empty regime set".into()));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    let n = regimes.len();
    let smoothed: Vec<LabelDistribution> =
        regimes.iter().map(|d| d.smoothed(KL_EPSILON)).collect();
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            let k = symmetric_kl(&smoothed[i], &smoothed[j])?;
            let w = (-beta * k).exp();
            matrix[i * n + j] = w;
            row_sum += w;
        }
        for j in 0..n {
            matrix[i * n + j] /= row_sum;
        }
    }
    Ok(matrix)
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
///
/// Iterates `mu <- mu P` until `max_j |(mu P)_j - mu_j| < 1e-12`.
pub fn stationary_distribution(transition: &[f64], n_states: usize) -> Result<Vec<f64>> {
    if n_states == 0 || transition.len() != n_states * n_states {
        return Err(Error::InvalidParameter(format!(
            "transition matrix of len {} is not {n_states}x{n_states}",
            transition.len()
        )));
    }
    for i in 0..n_states {
        let row_sum: f64 = transition[i * n_states..(i + 1) * n_states].iter().sum();
        if (row_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "transition row {i} sums to {row_sum}, expected 1"
            )));
        }
    }
    let mut mu = vec![1.0 / n_states as f64; n_states];
    let mut next = vec![0.0; n_states];
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITERS {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (i, &m) in mu.iter().enumerate() {
            for (j, out) in next.iter_mut().enumerate() {
                *out += m * transition[i * n_states + j];
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = mu
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut mu, &mut next);
        if residual < STATIONARY_TOL {
            return Ok(mu);
        }
    }
    Err(Error::NoConvergence {
        iterations: STATIONARY_MAX_ITERS,
        residual,
    })
}

/// Mixes regimes by their stationary weights: `pi = sum_i mu_i * regime_i`.
pub fn long_term_distribution(
    regimes: &[LabelDistribution],
    stationary: &[f64],
) -> Result<LabelDistribution> {
    if regimes.len() != stationary.len() {
        return Err(Error::DimensionMismatch {
            left: regimes.len(),
            right: stationary.len(),
        });
    }
    let n = regimes
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty regime set".into()))?
        .len();
    let mut mix = vec![0.0; n];
    for (regime, &w) in regimes.iter().zip(stationary) {
        for (m, &p) in mix.iter_mut().zip(regime.probs()) {
            *m += w * p;
        }
    }
    LabelDistribution::from_weights(&mix)
}

/// A regime set with its transition kernel and stationary mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeSet {
    pub regimes: Vec<LabelDistribution>,
    pub beta: f64,
    /// Row-major `n x n` transition matrix.
    pub transition: Vec<f64>,
    pub stationary: Vec<f64>,
}

impl RegimeSet {
    /// Draws regimes and assembles transition matrix and stationary mixture.
    pub fn build(
        rng: &mut SimRng,
        num_classes: usize,
        num_regimes: usize,
        concentration: f64,
        beta: f64,
    ) -> Result<Self> {
        let regimes = build_regimes(rng, num_classes, num_regimes, concentration)?;
        Self::from_regimes(regimes, beta)
    }

    /// Assembles the kernel for an existing regime list.
    pub fn from_regimes(regimes: Vec<LabelDistribution>, beta: f64) -> Result<Self> {
        let transition = build_transition_matrix(&regimes, beta)?;
        let stationary = stationary_distribution(&transition, regimes.len())?;
        Ok(Self {
            regimes,
            beta,
            transition,
            stationary,
        })
    }

    pub fn num_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn num_classes(&self) -> usize {
        self.regimes[0].len()
    }

    pub fn transition_row(&self, i: usize) -> &[f64] {
        let n = self.num_regimes();
        &self.transition[i * n..(i + 1) * n]
    }

    /// Long-term label distribution `pi` of the stream.
    pub fn long_term(&self) -> Result<LabelDistribution> {
        long_term_distribution(&self.regimes, &self.stationary)
    }
}

/// Correlation parameters of a stream: horizon and covariance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    /// Largest lag (in rounds) with autocovariance above the noise floor.
    pub gamma: usize,
    /// Maximum per-class autocovariance over lags `0..=gamma`.
    pub delta_sq: f64,
}

/// Position of a client's stream: current regime, round, and RNG state.
#[derive(Debug, Clone)]
pub struct StreamState {
    pub current_regime: usize,
    pub round: u64,
    rng: SimRng,
}

impl StreamState {
    /// Starts a stream with the initial regime drawn from the stationary
    /// mixture, so the regime process is stationary from the first round.
    pub fn new(regime_set: &RegimeSet, mut rng: SimRng) -> Self {
        let current_regime = sample_categorical(&mut rng, &regime_set.stationary);
        Self {
            current_regime,
            round: 0,
            rng,
        }
    }
}

/// Draws one class index from a probability vector by inverse CDF.
pub(crate) fn sample_categorical(rng: &mut SimRng, probs: &[f64]) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws `n` items from a categorical distribution and returns per-class counts.
pub(crate) fn sample_multinomial(rng: &mut SimRng, probs: &[f64], n: usize) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..n {
        counts[sample_categorical(rng, probs)] += 1;
    }
    counts
}

/// Advances the stream by one round.
///
/// Samples the next regime from the current regime's transition row, then
/// draws `batch_size` labels multinomially from it. Returns the short-term
/// distribution `u_t` and the raw batch counts.
pub fn advance_stream(
    state: &mut StreamState,
    regime_set: &RegimeSet,
    batch_size: usize,
) -> (LabelDistribution, Vec<u64>) {
    let row = regime_set.transition_row(state.current_regime);
    state.current_regime = sample_categorical(&mut state.rng, row);
    state.round += 1;
    let regime = &regime_set.regimes[state.current_regime];
    let counts = sample_multinomial(&mut state.rng, regime.probs(), batch_size);
    let u = LabelDistribution::from_counts(&counts).expect("batch_size > 0");
    (u, counts)
}

/// Estimates a stream's correlation profile by simulating `rounds` rounds
/// with a dedicated RNG substream.
pub fn calibrate_correlation(
    regime_set: &RegimeSet,
    batch_size: usize,
    rounds: usize,
    tau_max: usize,
    rng: SimRng,
) -> Result<CorrelationProfile> {
    let pi = regime_set.long_term()?;
    let mut state = StreamState::new(regime_set, rng);
    let series: Vec<LabelDistribution> = (0..rounds)
        .map(|_| advance_stream(&mut state, regime_set, batch_size).0)
        .collect();
    estimate_correlation(&series, &pi, tau_max)
}

/// Empirical per-lag autocovariance of a stream, maximized over classes.
///
/// `profile[tau] = max_r mean_t (u_t^r - pi^r)(u_{t-tau}^r - pi^r)`.
pub fn autocovariance_profile(
    u_series: &[LabelDistribution],
    pi: &LabelDistribution,
    tau_max: usize,
) -> Result<Vec<f64>> {
    let len = u_series.len();
    if len < 10 * tau_max.max(1) {
        return Err(Error::SeriesTooShort { len, tau_max });
    }
    let num_classes = pi.len();
    // Deviations per class, per round.
    let dev: Vec<Vec<f64>> = (0..num_classes)
        .map(|r| u_series.iter().map(|u| u[r] - pi[r]).collect())
        .collect();
    let mut profile = Vec::with_capacity(tau_max + 1);
    for tau in 0..=tau_max {
        let mut max_cov = f64::NEG_INFINITY;
        for d in &dev {
            let cov: f64 = (tau..len).map(|t| d[t] * d[t - tau]).sum::<f64>() / (len - tau) as f64;
            max_cov = max_cov.max(cov);
        }
        profile.push(max_cov);
    }
    Ok(profile)
}

/// Estimates the correlation horizon and covariance level of a stream.
///
/// `delta_sq` is the maximum autocovariance over lags `0..=tau_max`; `gamma`
/// is the largest lag whose autocovariance exceeds the noise floor
/// `CORRELATION_NOISE_FACTOR / sqrt(len)` times the lag-0 value. A stream
/// with zero variance is rejected as degenerate.
pub fn estimate_correlation(
    u_series: &[LabelDistribution],
    pi: &LabelDistribution,
    tau_max: usize,
) -> Result<CorrelationProfile> {
    let profile = autocovariance_profile(u_series, pi, tau_max)?;
    let lag0 = profile[0];
    if !(lag0 > 0.0) {
        return Err(Error::DegenerateStream);
    }
    let floor = CORRELATION_NOISE_FACTOR / (u_series.len() as f64).sqrt() * lag0;
    let gamma = (0..=tau_max)
        .rev()
        .find(|&tau| profile[tau] > floor)
        .unwrap_or(0);
    let delta_sq = profile[..=gamma]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CorrelationProfile { gamma, delta_sq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, StreamTag};

    fn dist(v: &[f64]) -> LabelDistribution {
        LabelDistribution::try_new(v.to_vec()).unwrap()
    }

    fn test_rng(seed: u64) -> SimRng {
        substream(seed, 0, StreamTag::Regimes)
    }

    #[test]
    fn try_new_rejects_bad_vectors() {
        assert!(LabelDistribution::try_new(vec![]).is_err());
        assert!(LabelDistribution::try_new(vec![0.5, -0.5, 1.0]).is_err());
        assert!(LabelDistribution::try_new(vec![0.5, 0.6]).is_err());
        assert!(LabelDistribution::try_new(vec![0.5, f64::NAN]).is_err());
        assert!(LabelDistribution::try_new(vec![0.3, 0.7]).is_ok());
    }

    #[test]
    fn kl_identity_is_zero() {
        let p = dist(&[0.3, 0.7]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_computed_values() {
        // KL([1,0] || [0.5,0.5]) = ln 2.
        let p = dist(&[1.0, 0.0]);
        let q = dist(&[0.5, 0.5]);
        assert!((kl_divergence(&p, &q).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = 0.510825623765990...
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.9, 0.1]);
        let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((expect - 0.510825623765990).abs() < 1e-12);
        assert!((kl_divergence(&p, &q).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_mismatch_and_zero_support() {
        let p = dist(&[1.0, 0.0]);
        let q3 = dist(&[0.2, 0.3, 0.5]);
        assert!(matches!(
            kl_divergence(&p, &q3),
            Err(Error::DimensionMismatch { .. })
        ));
        let q = dist(&[0.0, 1.0]);
        assert!(kl_divergence(&p, &q).is_err());
        // Smoothing makes it finite.
        assert!(kl_divergence(&p, &q.smoothed(KL_EPSILON)).is_ok());
    }

    #[test]
    fn regimes_infinite_concentration_is_uniform() {
        let mut rng = test_rng(1);
        let regimes = build_regimes(&mut rng, 4, 3, f64::INFINITY).unwrap();
        for r in &regimes {
            assert_eq!(r.probs(), LabelDistribution::uniform(4).probs());
        }
    }

    #[test]
    fn regimes_are_deterministic_and_valid() {
        let a = build_regimes(&mut test_rng(9), 3, 10, 0.5).unwrap();
        let b = build_regimes(&mut test_rng(9), 3, 10, 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        for d in &a {
            let sum: f64 = d.probs().iter().sum();
            assert!((sum - 1.0).abs() <= DIST_SUM_TOL);
            assert!(d.probs().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn transition_beta_zero_is_uniform() {
        let regimes = build_regimes(&mut test_rng(2), 3, 4, 0.5).unwrap();
        let m = build_transition_matrix(&regimes, 0.0).unwrap();
        for &e in &m {
            assert!((e - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn transition_identical_regimes_split_evenly() {
        let r = dist(&[0.4, 0.6]);
        let m = build_transition_matrix(&[r.clone(), r], 3.0).unwrap();
        for &e in &m {
            assert!((e - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_rows_order_opposite_to_divergence() {
        let regimes = vec![
            dist(&[0.8, 0.1, 0.1]),
            dist(&[0.7, 0.2, 0.1]),
            dist(&[0.1, 0.1, 0.8]),
        ];
        let smoothed: Vec<_> = regimes.iter().map(|d| d.smoothed(KL_EPSILON)).collect();
        let m = build_transition_matrix(&regimes, 1.0).unwrap();
        let n = regimes.len();
        for i in 0..n {
            let row = &m[i * n..(i + 1) * n];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..n {
                for j2 in 0..n {
                    let kj = symmetric_kl(&smoothed[i], &smoothed[j]).unwrap();
                    let kj2 = symmetric_kl(&smoothed[i], &smoothed[j2]).unwrap();
                    if kj < kj2 {
                        assert!(row[j] >= row[j2]);
                    }
                }
            }
        }
    }

    #[test]
    fn stationary_symmetric_chain_is_half_half() {
        let mu = stationary_distribution(&[0.9, 0.1, 0.1, 0.9], 2).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-10);
        assert!((mu[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn stationary_doubly_stochastic_is_uniform() {
        #[rustfmt::skip]
        let p = [
            0.2, 0.3, 0.5,
            0.5, 0.2, 0.3,
            0.3, 0.5, 0.2,
        ];
        let mu = stationary_distribution(&p, 3).unwrap();
        for &m in &mu {
            assert!((m - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn stationary_solves_two_state_balance() {
        // mu1 * 0.5 = mu2 * 0.25 and mu1 + mu2 = 1 give [1/3, 2/3].
        let mu = stationary_distribution(&[0.5, 0.5, 0.25, 0.75], 2).unwrap();
        assert!((mu[0] - 1.0 / 3.0).abs() < 1e-10);
        assert!((mu[1] - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn stationary_is_a_fixed_point() {
        let regimes = build_regimes(&mut test_rng(3), 4, 6, 0.5).unwrap();
        let p = build_transition_matrix(&regimes, 1.0).unwrap();
        let mu = stationary_distribution(&p, 6).unwrap();
        for j in 0..6 {
            let pj: f64 = (0..6).map(|i| mu[i] * p[i * 6 + j]).sum();
            assert!((pj - mu[j]).abs() < 1e-10);
        }
        assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn long_term_single_regime_is_that_regime() {
        let r = dist(&[0.2, 0.8]);
        let pi = long_term_distribution(&[r.clone()], &[1.0]).unwrap();
        assert_eq!(pi.probs(), r.probs());
    }

    #[test]
    fn long_term_symmetric_mixture() {
        let pi = long_term_distribution(
            &[dist(&[1.0, 0.0]), dist(&[0.0, 1.0])],
            &[0.5, 0.5],
        )
        .unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15);
        assert!((pi[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn long_term_matches_elementwise_mixture() {
        let regimes = vec![
            dist(&[0.8, 0.1, 0.1]),
            dist(&[0.5, 0.25, 0.25]),
            dist(&[0.1, 0.2, 0.7]),
        ];
        let mu = [0.2, 0.3, 0.5];
        let pi = long_term_distribution(&regimes, &mu).unwrap();
        for r in 0..3 {
            let by_hand: f64 = (0..3).map(|i| mu[i] * regimes[i][r]).sum();
            assert!((pi[r] - by_hand).abs() < 1e-15);
        }
    }

    #[test]
    fn advance_stream_degenerate_regime_fills_one_class() {
        let regimes = vec![dist(&[1.0, 0.0, 0.0])];
        let set = RegimeSet::from_regimes(regimes, 1.0).unwrap();
        let mut state = StreamState::new(&set, test_rng(4));
        let (u, counts) = advance_stream(&mut state, &set, 20);
        assert_eq!(counts, vec![20, 0, 0]);
        assert_eq!(u.probs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn advance_stream_counts_sum_to_batch_size() {
        let set = RegimeSet::build(&mut test_rng(5), 5, 4, 0.5, 1.0).unwrap();
        let mut state = StreamState::new(&set, test_rng(6));
        for _ in 0..50 {
            let (_, counts) = advance_stream(&mut state, &set, 33);
            assert_eq!(counts.iter().sum::<u64>(), 33);
        }
    }

    #[test]
    fn advance_stream_is_reproducible() {
        let set = RegimeSet::build(&mut test_rng(7), 5, 4, 0.5, 1.0).unwrap();
        let run = |seed| {
            let mut state = StreamState::new(&set, test_rng(seed));
            (0..40)
                .map(|_| advance_stream(&mut state, &set, 17).1)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(8), run(8));
        assert_ne!(run(8), run(9));
    }

    #[test]
    fn advance_stream_uniform_regime_obeys_law_of_large_numbers() {
        let n_classes = 4;
        let batch = 16;
        let rounds = 100_000usize;
        let set =
            RegimeSet::from_regimes(vec![LabelDistribution::uniform(n_classes)], 1.0).unwrap();
        let mut state = StreamState::new(&set, test_rng(10));
        let mut mean = vec![0.0; n_classes];
        for _ in 0..rounds {
            let (u, _) = advance_stream(&mut state, &set, batch);
            for (m, &p) in mean.iter_mut().zip(u.probs()) {
                *m += p;
            }
        }
        let p = 1.0 / n_classes as f64;
        // SE of the mean of u^r over `rounds` multinomial draws of size `batch`.
        let se = (p * (1.0 - p) / batch as f64 / rounds as f64).sqrt();
        for m in &mean {
            assert!((m / rounds as f64 - p).abs() < 3.0 * se);
        }
    }

    #[test]
    fn time_average_converges_to_long_term() {
        let set = RegimeSet::build(&mut test_rng(11), 5, 10, 0.5, 1.0).unwrap();
        let pi = set.long_term().unwrap();
        let rounds = 100_000usize;
        let mut state = StreamState::new(&set, test_rng(12));
        let mut mean = vec![0.0; 5];
        let mut sq = vec![0.0; 5];
        for _ in 0..rounds {
            let (u, _) = advance_stream(&mut state, &set, 50);
            for r in 0..5 {
                mean[r] += u[r];
                sq[r] += u[r] * u[r];
            }
        }
        for r in 0..5 {
            let m = mean[r] / rounds as f64;
            let var = sq[r] / rounds as f64 - m * m;
            assert!(
                (m - pi[r]).abs() < 5.0 * (var / rounds as f64).sqrt(),
                "class {r}: mean {m} vs pi {}",
                pi[r]
            );
        }
    }

    #[test]
    fn correlation_iid_stream_has_zero_gamma() {
        // beta = 0 makes regime draws independent across rounds.
        let set = RegimeSet::build(&mut test_rng(13), 4, 8, 0.5, 0.0).unwrap();
        let pi = set.long_term().unwrap();
        let mut state = StreamState::new(&set, test_rng(14));
        let series: Vec<LabelDistribution> = (0..20_000)
            .map(|_| advance_stream(&mut state, &set, 25).0)
            .collect();
        let profile = estimate_correlation(&series, &pi, 20).unwrap();
        assert_eq!(profile.gamma, 0);
        assert!(profile.delta_sq > 0.0);
    }

    #[test]
    fn correlation_constant_stream_is_degenerate() {
        let pi = dist(&[0.25, 0.75]);
        let series = vec![pi.clone(); 2_000];
        assert!(matches!(
            estimate_correlation(&series, &pi, 10),
            Err(Error::DegenerateStream)
        ));
    }

    #[test]
    fn correlation_sticky_chain_has_larger_gamma() {
        let regimes = build_regimes(&mut test_rng(15), 4, 8, 0.5).unwrap();
        let run = |beta: f64, seed: u64| {
            let set = RegimeSet::from_regimes(regimes.clone(), beta).unwrap();
            let pi = set.long_term().unwrap();
            let mut state = StreamState::new(&set, test_rng(seed));
            let series: Vec<LabelDistribution> = (0..20_000)
                .map(|_| advance_stream(&mut state, &set, 25).0)
                .collect();
            estimate_correlation(&series, &pi, 50).unwrap().gamma
        };
        assert!(run(6.0, 16) > run(0.0, 16));
    }

    #[test]
    fn correlation_rejects_short_series() {
        let pi = dist(&[0.5, 0.5]);
        let series = vec![pi.clone(); 40];
        assert!(matches!(
            estimate_correlation(&series, &pi, 10),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn autocovariance_beyond_mixing_horizon_is_noise() {
        let set = RegimeSet::build(&mut test_rng(17), 4, 8, 0.5, 0.0).unwrap();
        let pi = set.long_term().unwrap();
        let mut state = StreamState::new(&set, test_rng(18));
        let series: Vec<LabelDistribution> = (0..50_000)
            .map(|_| advance_stream(&mut state, &set, 25).0)
            .collect();
        let profile = autocovariance_profile(&series, &pi, 30).unwrap();
        let floor = CORRELATION_NOISE_FACTOR / (series.len() as f64).sqrt() * profile[0];
        for tau in 1..=30 {
            assert!(
                profile[tau] <= floor,
                "lag {tau}: {} above noise floor {floor}",
                profile[tau]
            );
        }
    }

    #[test]
    fn regime_set_round_trips_through_json() {
        let set = RegimeSet::build(&mut test_rng(19), 3, 4, 0.5, 1.5).unwrap();
        let json = serde_json::to_string(&set).unwrap();
        let back: RegimeSet = serde_json::from_str(&json).unwrap();
        assert_eq!(set.regimes, back.regimes);
        assert_eq!(set.transition, back.transition);
        assert_eq!(set.stationary, back.stationary);
    }
}

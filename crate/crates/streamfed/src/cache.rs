//! Finite labeled caches and their update policies.
//!
//! Four update rules are provided. FIFO keeps a sliding window of the last
//! `M = B / B_s` batches. SRSR tracks an exponentially weighted moving
//! average of class counts with fixed weight theta; DRSR uses the decaying
//! weight `theta_t = B / (B_s t)`, which makes the cache follow the running
//! time-average of arrival distributions. LAZY freezes the cache after the
//! initial fill. The FULL benchmark cache is built once from the long-term
//! distribution and never updated.
//!
//! The weighted-average recursion is kept on real-valued `ideal_counts`; the
//! physical cache is apportioned from the ideals each round, which keeps the
//! per-class gap between ideal and stored counts at most one item. Policy
//! arithmetic is defined purely over class counts ([`CountCache`]) so that
//! count-only simulations share the exact update logic with the item-level
//! [`LabeledCache`].

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::LabelDistribution;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Tolerance for the apportionment total check.
const APPORTION_SUM_TOL: f64 = 1e-6;

/// Cache geometry: capacity `B` and per-round batch size `B_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    /// Cache capacity `B` in items.
    pub capacity: usize,
    /// Arriving batch size `B_s` in items.
    pub batch_size: usize,
}

impl CacheConfig {
    pub fn new(capacity: usize, batch_size: usize) -> Result<Self> {
        let cfg = Self {
            capacity,
            batch_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        if self.capacity % self.batch_size != 0 {
            return Err(Error::InvalidParameter(format!(
                "capacity {} is not a multiple of batch_size {}",
                self.capacity, self.batch_size
            )));
        }
        if self.num_batches() < 2 {
            return Err(Error::InvalidParameter(format!(
                "capacity {} must be at least twice batch_size {}",
                self.capacity, self.batch_size
            )));
        }
        Ok(())
    }

    /// Capacity in batches, `M = B / B_s`.
    pub fn num_batches(&self) -> usize {
        self.capacity / self.batch_size
    }
}

/// Cache update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Fifo,
    Srsr,
    Drsr,
    Lazy,
    Full,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Full,
        PolicyKind::Fifo,
        PolicyKind::Srsr,
        PolicyKind::Drsr,
        PolicyKind::Lazy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Fifo => "fifo",
            PolicyKind::Srsr => "srsr",
            PolicyKind::Drsr => "drsr",
            PolicyKind::Lazy => "lazy",
            PolicyKind::Full => "full",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fifo" => Ok(PolicyKind::Fifo),
            "srsr" => Ok(PolicyKind::Srsr),
            "drsr" => Ok(PolicyKind::Drsr),
            "lazy" => Ok(PolicyKind::Lazy),
            "full" => Ok(PolicyKind::Full),
            other => Err(Error::InvalidParameter(format!(
                "unknown policy '{other}' (expected fifo|srsr|drsr|lazy|full)"
            ))),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Update rule plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Replacement weight in `(0, 1]`; used by SRSR only.
    #[serde(default)]
    pub theta: Option<f64>,
}

impl PolicyConfig {
    pub fn fifo() -> Self {
        Self {
            kind: PolicyKind::Fifo,
            theta: None,
        }
    }

    pub fn srsr(theta: f64) -> Result<Self> {
        let cfg = Self {
            kind: PolicyKind::Srsr,
            theta: Some(theta),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn drsr() -> Self {
        Self {
            kind: PolicyKind::Drsr,
            theta: None,
        }
    }

    pub fn lazy() -> Self {
        Self {
            kind: PolicyKind::Lazy,
            theta: None,
        }
    }

    pub fn full() -> Self {
        Self {
            kind: PolicyKind::Full,
            theta: None,
        }
    }

    /// Builds the policy of `kind`, pulling theta from `theta` when needed.
    pub fn for_kind(kind: PolicyKind, theta: Option<f64>) -> Result<Self> {
        match kind {
            PolicyKind::Srsr => {
                let theta = theta.ok_or_else(|| {
                    Error::InvalidParameter("SRSR requires a theta in (0, 1]".into())
                })?;
                Self::srsr(theta)
            }
            PolicyKind::Fifo => Ok(Self::fifo()),
            PolicyKind::Drsr => Ok(Self::drsr()),
            PolicyKind::Lazy => Ok(Self::lazy()),
            PolicyKind::Full => Ok(Self::full()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == PolicyKind::Srsr {
            match self.theta {
                Some(t) if t > 0.0 && t <= 1.0 => Ok(()),
                other => Err(Error::InvalidParameter(format!(
                    "SRSR theta must lie in (0, 1], got {other:?}"
                ))),
            }
        } else {
            Ok(())
        }
    }

    fn srsr_theta(&self) -> Result<f64> {
        match self.theta {
            Some(t) if t > 0.0 && t <= 1.0 => Ok(t),
            other => Err(Error::InvalidParameter(format!(
                "SRSR theta must lie in (0, 1], got {other:?}"
            ))),
        }
    }
}

/// One cached labeled item.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheItem {
    pub features: Vec<f64>,
    pub label: usize,
    pub arrival_round: u64,
}

impl CacheItem {
    pub fn new(features: Vec<f64>, label: usize, arrival_round: u64) -> Self {
        Self {
            features,
            label,
            arrival_round,
        }
    }
}

/// JSON-exportable snapshot of a cache's count state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheSnapshot {
    pub round: u64,
    pub len: usize,
    pub class_counts: Vec<u64>,
    pub ideal_counts: Vec<f64>,
}

/// The per-client labeled item store.
///
/// Items are kept in arrival order (oldest first); `class_counts` mirrors the
/// stored items and `ideal_counts` carries the real-valued policy targets.
#[derive(Debug, Clone)]
pub struct LabeledCache {
    config: CacheConfig,
    items: VecDeque<CacheItem>,
    class_counts: Vec<u64>,
    ideal_counts: Vec<f64>,
    immutable: bool,
}

impl LabeledCache {
    pub fn new(config: CacheConfig, num_classes: usize) -> Self {
        Self {
            config,
            items: VecDeque::new(),
            class_counts: vec![0; num_classes],
            ideal_counts: vec![0.0; num_classes],
            immutable: false,
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.config.capacity
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    pub fn ideal_counts(&self) -> &[f64] {
        &self.ideal_counts
    }

    pub fn items(&self) -> impl Iterator<Item = &CacheItem> {
        self.items.iter()
    }

    /// Marks the cache as read-only (FULL benchmark).
    pub fn mark_immutable(&mut self) {
        self.immutable = true;
    }

    pub fn is_immutable(&self) -> bool {
        self.immutable
    }

    /// Label distribution of the stored items.
    pub fn cached_distribution(&self) -> Result<LabelDistribution> {
        if self.items.is_empty() {
            return Err(Error::EmptyCache);
        }
        LabelDistribution::from_counts(&self.class_counts)
    }

    pub fn snapshot(&self, round: u64) -> CacheSnapshot {
        CacheSnapshot {
            round,
            len: self.items.len(),
            class_counts: self.class_counts.clone(),
            ideal_counts: self.ideal_counts.clone(),
        }
    }

    fn guard_mutable(&self) -> Result<()> {
        if self.immutable {
            return Err(Error::InvalidParameter(
                "cache is immutable (FULL benchmark)".into(),
            ));
        }
        Ok(())
    }

    /// Appends items without eviction; used during the fill phase and by
    /// the FULL benchmark constructor.
    pub(crate) fn append(&mut self, batch: Vec<CacheItem>) -> Result<()> {
        if self.items.len() + batch.len() > self.config.capacity {
            return Err(Error::InvalidParameter(format!(
                "append of {} items overflows capacity {}",
                batch.len(),
                self.config.capacity
            )));
        }
        for item in batch {
            self.class_counts[item.label] += 1;
            self.ideal_counts[item.label] += 1.0;
            self.items.push_back(item);
        }
        Ok(())
    }

    #[cfg(test)]
    fn recount(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.class_counts.len()];
        for item in &self.items {
            counts[item.label] += 1;
        }
        counts
    }
}

/// Counts the labels of a batch.
pub(crate) fn count_labels(batch: &[CacheItem], num_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_classes];
    for item in batch {
        counts[item.label] += 1;
    }
    counts
}

/// FIFO update: evicts the `B_s` oldest items and appends the batch.
///
/// During the fill phase the batch is appended without eviction. Returns the
/// evicted items.
pub fn fifo_update(cache: &mut LabeledCache, batch: Vec<CacheItem>) -> Result<Vec<CacheItem>> {
    cache.guard_mutable()?;
    let batch_size = cache.config.batch_size;
    if batch.len() != batch_size {
        return Err(Error::InvalidParameter(format!(
            "batch of {} items, expected {batch_size}",
            batch.len()
        )));
    }
    let mut evicted = Vec::new();
    if cache.items.len() + batch.len() > cache.config.capacity {
        for _ in 0..batch_size {
            // Oldest first; insertion order breaks arrival-round ties.
            let item = cache.items.pop_front().expect("cache holds >= B_s items");
            cache.class_counts[item.label] -= 1;
            evicted.push(item);
        }
    }
    for item in batch {
        cache.class_counts[item.label] += 1;
        cache.items.push_back(item);
    }
    cache.ideal_counts = cache.class_counts.iter().map(|&c| c as f64).collect();
    Ok(evicted)
}

/// The weighted-average target recursion on real-valued counts:
/// `target_r = (1 - theta B_s / B) prev_r + theta batch_r`.
fn blend_targets(prev: &[f64], batch_counts: &[u64], theta: f64, config: &CacheConfig) -> Vec<f64> {
    let keep = 1.0 - theta * config.batch_size as f64 / config.capacity as f64;
    prev.iter()
        .zip(batch_counts)
        .map(|(&p, &s)| keep * p + theta * s as f64)
        .collect()
}

/// Selective-replacement target counts from integer cache and batch counts.
///
/// Requires a full cache (`sum counts_cache = B`) and a full batch
/// (`sum counts_batch = B_s`); the returned real targets sum to `B`.
pub fn srsr_targets(
    counts_cache: &[u64],
    counts_batch: &[u64],
    theta: f64,
    config: &CacheConfig,
) -> Result<Vec<f64>> {
    if counts_cache.len() != counts_batch.len() {
        return Err(Error::DimensionMismatch {
            left: counts_cache.len(),
            right: counts_batch.len(),
        });
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "theta must lie in (0, 1], got {theta}"
        )));
    }
    let cache_total: u64 = counts_cache.iter().sum();
    if cache_total != config.capacity as u64 {
        return Err(Error::InvalidParameter(format!(
            "cache counts sum to {cache_total}, expected capacity {}",
            config.capacity
        )));
    }
    let batch_total: u64 = counts_batch.iter().sum();
    if batch_total != config.batch_size as u64 {
        return Err(Error::InvalidParameter(format!(
            "batch counts sum to {batch_total}, expected batch size {}",
            config.batch_size
        )));
    }
    let prev: Vec<f64> = counts_cache.iter().map(|&c| c as f64).collect();
    Ok(blend_targets(&prev, counts_batch, theta, config))
}

/// The DRSR weight `theta_t = min(1, B / (B_s t))`.
///
/// Equals `B / (B_s t)` from the first post-fill round onward and is clamped
/// to 1 during the fill phase, where the rule appends whole batches anyway.
pub fn drsr_theta(t: u64, config: &CacheConfig) -> Result<f64> {
    if t < 1 {
        return Err(Error::InvalidParameter("round index must be >= 1".into()));
    }
    Ok((config.capacity as f64 / (config.batch_size as f64 * t as f64)).min(1.0))
}

/// Largest-remainder apportionment of real targets into integer counts.
///
/// Floors every target, then hands the remaining units out in descending
/// fractional-part order (ties broken by ascending class index), never
/// exceeding `caps`. When a cap binds, the shortfall is redistributed in the
/// same order among classes still below their caps.
pub fn apportion(real_targets: &[f64], total: u64, caps: &[u64]) -> Result<Vec<u64>> {
    if real_targets.len() != caps.len() {
        return Err(Error::DimensionMismatch {
            left: real_targets.len(),
            right: caps.len(),
        });
    }
    let sum: f64 = real_targets.iter().sum();
    if (sum - total as f64).abs() > APPORTION_SUM_TOL {
        return Err(Error::InfeasibleTargets(format!(
            "targets sum to {sum}, expected {total}"
        )));
    }
    if real_targets.iter().any(|&t| t < -APPORTION_SUM_TOL || !t.is_finite()) {
        return Err(Error::InfeasibleTargets("negative target".into()));
    }
    let cap_sum: u64 = caps.iter().sum();
    if cap_sum < total {
        return Err(Error::InfeasibleTargets(format!(
            "caps sum to {cap_sum}, cannot reach {total}"
        )));
    }

    let n = real_targets.len();
    let mut result = vec![0u64; n];
    let mut fracs = vec![0.0f64; n];
    let mut assigned = 0u64;
    for r in 0..n {
        let target = real_targets[r].max(0.0);
        let floor = target.floor() as u64;
        result[r] = floor.min(caps[r]);
        fracs[r] = target - target.floor();
        assigned += result[r];
    }

    // Priority order: descending fractional part, then ascending class index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        fracs[b]
            .partial_cmp(&fracs[a])
            .expect("finite fractional parts")
            .then(a.cmp(&b))
    });

    let mut remaining = total - assigned;
    while remaining > 0 {
        let mut progressed = false;
        for &r in &order {
            if remaining == 0 {
                break;
            }
            if result[r] < caps[r] {
                result[r] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            return Err(Error::InfeasibleTargets(
                "caps exhausted before total was met".into(),
            ));
        }
    }
    Ok(result)
}

/// Chooses `k` of `n` indices uniformly at random, returned in ascending
/// order for deterministic downstream iteration.
fn choose_indices(rng: &mut SimRng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut chosen = idx;
    chosen.truncate(k);
    chosen.sort_unstable();
    chosen
}

/// Rewrites the cache so its class counts equal `targets`, keeping as much
/// of the new batch as possible.
///
/// Per class `r` (ascending): if the target does not exceed the batch's
/// class-`r` count, all cached class-`r` items are dropped and the target
/// number of items is drawn uniformly from the batch; otherwise the surplus
/// `cached_r + batch_r - target_r` is removed uniformly from the cached
/// class-`r` items and the whole batch contribution is inserted.
pub fn selective_replace(
    rng: &mut SimRng,
    cache: &mut LabeledCache,
    batch: Vec<CacheItem>,
    targets: &[u64],
) -> Result<()> {
    cache.guard_mutable()?;
    let num_classes = cache.num_classes();
    if targets.len() != num_classes {
        return Err(Error::DimensionMismatch {
            left: targets.len(),
            right: num_classes,
        });
    }
    let total: u64 = targets.iter().sum();
    if total != cache.config.capacity as u64 {
        return Err(Error::InfeasibleTargets(format!(
            "targets sum to {total}, expected capacity {}",
            cache.config.capacity
        )));
    }

    // Group the batch per class, preserving batch order.
    let mut batch_groups: Vec<Vec<CacheItem>> = (0..num_classes).map(|_| Vec::new()).collect();
    for item in batch {
        batch_groups[item.label].push(item);
    }
    for r in 0..num_classes {
        if targets[r] > cache.class_counts[r] + batch_groups[r].len() as u64 {
            return Err(Error::InfeasibleTargets(format!(
                "class {r}: target {} exceeds available {} cached + {} new",
                targets[r],
                cache.class_counts[r],
                batch_groups[r].len()
            )));
        }
    }

    // Positions of cached items per class.
    let mut cached_positions: Vec<Vec<usize>> = (0..num_classes).map(|_| Vec::new()).collect();
    for (pos, item) in cache.items.iter().enumerate() {
        cached_positions[item.label].push(pos);
    }

    let mut remove = vec![false; cache.items.len()];
    let mut to_insert: Vec<CacheItem> = Vec::new();
    for (r, group) in batch_groups.into_iter().enumerate() {
        let target = targets[r] as usize;
        let batch_count = group.len();
        if target <= batch_count {
            // Drop every cached item of this class; fill from the batch.
            for &pos in &cached_positions[r] {
                remove[pos] = true;
            }
            let chosen = choose_indices(rng, batch_count, target);
            let mut group = group;
            for idx in chosen.into_iter().rev() {
                to_insert.push(group.swap_remove(idx));
            }
        } else {
            // Keep the whole batch contribution; trim the surplus from the
            // cached items uniformly.
            let surplus = cached_positions[r].len() + batch_count - target;
            let chosen = choose_indices(rng, cached_positions[r].len(), surplus);
            for idx in chosen {
                remove[cached_positions[r][idx]] = true;
            }
            to_insert.extend(group);
        }
    }

    let mut kept: VecDeque<CacheItem> = VecDeque::with_capacity(cache.config.capacity);
    for (pos, item) in cache.items.drain(..).enumerate() {
        if !remove[pos] {
            kept.push_back(item);
        }
    }
    kept.extend(to_insert);
    cache.items = kept;
    cache.class_counts = targets.to_vec();
    debug_assert_eq!(cache.items.len(), cache.config.capacity);
    Ok(())
}

/// Applies one round of the configured update rule.
///
/// Round `t` is 1-based. While the cache has room for the whole batch (the
/// fill phase, `t <= M`), every rule appends the batch unchanged; afterwards
/// FIFO evicts by age, SRSR and DRSR run the target recursion followed by
/// apportionment and selective replacement, LAZY discards the batch, and
/// FULL ignores the stream entirely.
pub fn policy_update(
    policy: &PolicyConfig,
    cache: &mut LabeledCache,
    batch: Vec<CacheItem>,
    t: u64,
    rng: &mut SimRng,
) -> Result<()> {
    if policy.kind == PolicyKind::Full {
        return Ok(());
    }
    if batch.len() != cache.config.batch_size {
        return Err(Error::InvalidParameter(format!(
            "batch of {} items, expected {}",
            batch.len(),
            cache.config.batch_size
        )));
    }
    if cache.len() + batch.len() <= cache.config.capacity {
        return cache.append(batch);
    }
    match policy.kind {
        PolicyKind::Fifo => {
            fifo_update(cache, batch)?;
        }
        PolicyKind::Lazy => {}
        PolicyKind::Srsr | PolicyKind::Drsr => {
            let theta = match policy.kind {
                PolicyKind::Srsr => policy.srsr_theta()?,
                _ => drsr_theta(t, &cache.config)?,
            };
            let batch_counts = count_labels(&batch, cache.num_classes());
            let ideal = blend_targets(&cache.ideal_counts, &batch_counts, theta, &cache.config);
            let caps: Vec<u64> = cache
                .class_counts
                .iter()
                .zip(&batch_counts)
                .map(|(&c, &s)| c + s)
                .collect();
            let targets = apportion(&ideal, cache.config.capacity as u64, &caps)?;
            selective_replace(rng, cache, batch, &targets)?;
            cache.ideal_counts = ideal;
        }
        PolicyKind::Full => unreachable!(),
    }
    Ok(())
}

/// Count-level mirror of the cache policies.
///
/// Tracks class counts only; Monte-Carlo bound verification runs on this
/// engine. The arithmetic (blend, apportion, fill rules) is shared with
/// [`policy_update`], so both views produce identical count trajectories for
/// identical batch-count sequences.
#[derive(Debug, Clone)]
pub struct CountCache {
    config: CacheConfig,
    policy: PolicyConfig,
    class_counts: Vec<u64>,
    ideal_counts: Vec<f64>,
    window: VecDeque<Vec<u64>>,
    round: u64,
    len: u64,
}

impl CountCache {
    pub fn new(config: CacheConfig, policy: PolicyConfig, num_classes: usize) -> Self {
        Self {
            config,
            policy,
            class_counts: vec![0; num_classes],
            ideal_counts: vec![0.0; num_classes],
            window: VecDeque::new(),
            round: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    pub fn ideal_counts(&self) -> &[f64] {
        &self.ideal_counts
    }

    pub fn cached_distribution(&self) -> Result<LabelDistribution> {
        if self.len == 0 {
            return Err(Error::EmptyCache);
        }
        LabelDistribution::from_counts(&self.class_counts)
    }

    /// Applies one round of the policy to a batch of class counts.
    pub fn apply_batch(&mut self, batch_counts: &[u64]) -> Result<()> {
        if batch_counts.len() != self.class_counts.len() {
            return Err(Error::DimensionMismatch {
                left: batch_counts.len(),
                right: self.class_counts.len(),
            });
        }
        let batch_total: u64 = batch_counts.iter().sum();
        if batch_total != self.config.batch_size as u64 {
            return Err(Error::InvalidParameter(format!(
                "batch counts sum to {batch_total}, expected {}",
                self.config.batch_size
            )));
        }
        self.round += 1;
        if self.policy.kind == PolicyKind::Full {
            return Ok(());
        }
        if self.len + batch_total <= self.config.capacity as u64 {
            for (c, &s) in self.class_counts.iter_mut().zip(batch_counts) {
                *c += s;
            }
            for (i, &s) in self.ideal_counts.iter_mut().zip(batch_counts) {
                *i += s as f64;
            }
            self.len += batch_total;
            if self.policy.kind == PolicyKind::Fifo {
                self.window.push_back(batch_counts.to_vec());
            }
            return Ok(());
        }
        match self.policy.kind {
            PolicyKind::Fifo => {
                let oldest = self.window.pop_front().expect("full FIFO window");
                for ((c, &old), &new) in self.class_counts.iter_mut().zip(&oldest).zip(batch_counts)
                {
                    *c = *c - old + new;
                }
                self.window.push_back(batch_counts.to_vec());
                self.ideal_counts = self.class_counts.iter().map(|&c| c as f64).collect();
            }
            PolicyKind::Lazy | PolicyKind::Full => {}
            PolicyKind::Srsr | PolicyKind::Drsr => {
                let theta = match self.policy.kind {
                    PolicyKind::Srsr => self.policy.srsr_theta()?,
                    _ => drsr_theta(self.round, &self.config)?,
                };
                let ideal = blend_targets(&self.ideal_counts, batch_counts, theta, &self.config);
                let caps: Vec<u64> = self
                    .class_counts
                    .iter()
                    .zip(batch_counts)
                    .map(|(&c, &s)| c + s)
                    .collect();
                self.class_counts = apportion(&ideal, self.config.capacity as u64, &caps)?;
                self.ideal_counts = ideal;
            }
        }
        Ok(())
    }
}

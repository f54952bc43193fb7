//! Synchronous federation rounds over streaming clients.
//!
//! Each round every client advances its stream, applies the cache update
//! rule, and runs local full-batch gradient descent from the current global
//! parameters; the server then averages the client deltas and takes one
//! global step. All randomness is drawn from per-(client, purpose) RNG
//! substreams of the experiment seed, so the stream realizations are
//! identical across policies run with the same seed.

use serde::{Deserialize, Serialize};

use crate::cache::{
    apportion, count_labels, policy_update, CacheConfig, CacheItem, LabeledCache, PolicyConfig,
    PolicyKind,
};
use crate::dist::{
    advance_stream, build_regimes, calibrate_correlation, CorrelationProfile, LabelDistribution,
    RegimeSet, StreamState,
};
use crate::error::{Error, Result};
use crate::learner::{
    evaluate, forward_loss, gradient, local_train, Example, ModelDims, ModelParams, SyntheticTask,
    TaskConfig,
};
use crate::metrics::{drsr_bound, fifo_bound, per_slot_discrepancy, srsr_bound, BoundInput};
use crate::rng::{substream, SimRng, StreamTag, GLOBAL_LANE};

/// Stream-generation parameters shared by every client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSettings {
    /// Number of short-term regimes per client.
    pub num_regimes: usize,
    /// Transition sharpness: higher beta concentrates transitions on
    /// low-divergence regime pairs.
    pub beta: f64,
    /// Symmetric Dirichlet concentration of the regime draws.
    pub concentration: f64,
}

impl Default for StreamSettings {
    fn default() -> Self {
        Self {
            num_regimes: 10,
            beta: 4.0,
            concentration: 0.5,
        }
    }
}

/// Synthetic task and model sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSettings {
    pub feature_dim: usize,
    /// Gaussian feature noise around the class means; see [`TaskConfig`].
    pub noise_sigma: f64,
    pub hidden_units: usize,
    pub test_set_size: usize,
    /// Seed of the task geometry and test set. Kept separate from the
    /// experiment seed so multi-seed averaging varies streams and model
    /// initialization while every run faces the same classification task,
    /// the way repeated runs on a fixed dataset do.
    pub task_seed: u64,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            noise_sigma: 1.3,
            hidden_units: 32,
            test_set_size: 2000,
            task_seed: 7,
        }
    }
}

/// Length and depth of the correlation-calibration stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub rounds: usize,
    pub tau_max: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            rounds: 10_000,
            tau_max: 50,
        }
    }
}

/// Full experiment configuration. Every field has an explicit default; the
/// effective (fully materialized) config is echoed into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of clients `K`.
    pub clients: usize,
    /// Number of label classes `R`.
    pub num_classes: usize,
    /// Classes in each client's long-term support, `C`.
    pub classes_per_client: usize,
    /// Federation rounds `T`.
    pub rounds: u64,
    /// Local gradient-descent steps per round, `E`.
    pub local_steps: usize,
    /// Global learning rate. Zero freezes the global model, which is useful
    /// for diagnostics.
    pub eta: f64,
    /// Local learning rate.
    pub eta_local: f64,
    pub cache: CacheConfig,
    pub policy: PolicyConfig,
    pub stream: StreamSettings,
    pub learner: LearnerSettings,
    pub calibration: CalibrationSettings,
    /// Test accuracy is computed every `eval_interval` rounds.
    pub eval_interval: u64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            num_classes: 10,
            classes_per_client: 3,
            rounds: 300,
            local_steps: 5,
            eta: 1.0,
            eta_local: 0.025,
            cache: CacheConfig {
                capacity: 300,
                batch_size: 150,
            },
            // theta feeds SRSR when it is among the requested policies.
            policy: PolicyConfig {
                kind: PolicyKind::Drsr,
                theta: Some(2.0 / 3.0),
            },
            stream: StreamSettings::default(),
            learner: LearnerSettings::default(),
            calibration: CalibrationSettings::default(),
            eval_interval: 1,
            seed: 42,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("clients must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.classes_per_client == 0 || self.classes_per_client > self.num_classes {
            return Err(Error::Config(format!(
                "classes_per_client must lie in 1..={}, got {}",
                self.num_classes, self.classes_per_client
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be >= 1".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::Config(format!(
                "eta must be non-negative, got {}",
                self.eta
            )));
        }
        if !(self.eta_local > 0.0) {
            return Err(Error::Config(format!(
                "eta_local must be positive, got {}",
                self.eta_local
            )));
        }
        self.cache
            .validate()
            .map_err(|e| Error::Config(format!("cache: {e}")))?;
        self.policy
            .validate()
            .map_err(|e| Error::Config(format!("policy: {e}")))?;
        if self.stream.num_regimes == 0 {
            return Err(Error::Config("stream.num_regimes must be >= 1".into()));
        }
        if !(self.stream.beta >= 0.0) {
            return Err(Error::Config("stream.beta must be non-negative".into()));
        }
        if !(self.stream.concentration > 0.0) {
            return Err(Error::Config(
                "stream.concentration must be positive".into(),
            ));
        }
        if self.learner.feature_dim == 0
            || self.learner.hidden_units == 0
            || self.learner.test_set_size == 0
        {
            return Err(Error::Config("learner sizes must all be positive".into()));
        }
        if !(self.learner.noise_sigma >= 0.0) {
            return Err(Error::Config(
                "learner.noise_sigma must be non-negative".into(),
            ));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be >= 1".into()));
        }
        if self.calibration.rounds < 10 * self.calibration.tau_max.max(1) {
            return Err(Error::Config(format!(
                "calibration.rounds {} too short for tau_max {}",
                self.calibration.rounds, self.calibration.tau_max
            )));
        }
        Ok(())
    }

    /// Copy of this config with a different policy, for comparative runs.
    pub fn with_policy(&self, policy: PolicyConfig) -> Self {
        let mut cfg = self.clone();
        cfg.policy = policy;
        cfg
    }

    /// Copy of this config with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        cfg
    }

    fn model_dims(&self) -> ModelDims {
        ModelDims {
            input: self.learner.feature_dim,
            hidden: self.learner.hidden_units,
            classes: self.num_classes,
        }
    }

    fn task_config(&self) -> TaskConfig {
        TaskConfig {
            feature_dim: self.learner.feature_dim,
            noise_sigma: self.learner.noise_sigma,
        }
    }
}

/// A client's stream description: support, regime kernel, long-term mixture,
/// and calibrated correlation parameters.
#[derive(Debug, Clone)]
pub struct StreamProfile {
    pub client: usize,
    pub support: Vec<usize>,
    pub regime_set: RegimeSet,
    pub long_term: LabelDistribution,
    pub correlation: CorrelationProfile,
}

/// Builds every client's stream profile.
///
/// Client `k` draws from the `classes_per_client`-wide window of classes
/// starting at `k mod num_classes`, so supports cover all classes evenly.
/// The correlation profile is estimated from a calibration stream that is
/// independent of the training stream.
pub fn build_client_profiles(config: &ExperimentConfig) -> Result<Vec<StreamProfile>> {
    config.validate()?;
    let r = config.num_classes;
    let c = config.classes_per_client;
    let mut profiles = Vec::with_capacity(config.clients);
    for k in 0..config.clients {
        let support: Vec<usize> = (0..c).map(|j| (k + j) % r).collect();
        let mut regime_rng = substream(config.seed, k as u32, StreamTag::Regimes);
        let low = if c == 1 {
            vec![LabelDistribution::uniform(1); config.stream.num_regimes]
        } else {
            build_regimes(
                &mut regime_rng,
                c,
                config.stream.num_regimes,
                config.stream.concentration,
            )
            .map_err(|e| Error::for_client(k, e))?
        };
        let embedded: Vec<LabelDistribution> = low
            .into_iter()
            .map(|d| {
                let mut probs = vec![0.0; r];
                for (j, &class) in support.iter().enumerate() {
                    probs[class] = d[j];
                }
                LabelDistribution::try_new(probs)
            })
            .collect::<Result<_>>()
            .map_err(|e| Error::for_client(k, e))?;
        let regime_set = RegimeSet::from_regimes(embedded, config.stream.beta)
            .map_err(|e| Error::for_client(k, e))?;
        let long_term = regime_set
            .long_term()
            .map_err(|e| Error::for_client(k, e))?;
        let correlation = calibrate_correlation(
            &regime_set,
            config.cache.batch_size,
            config.calibration.rounds,
            config.calibration.tau_max,
            substream(config.seed, k as u32, StreamTag::Calibration),
        )
        .map_err(|e| Error::for_client(k, e))?;
        profiles.push(StreamProfile {
            client: k,
            support,
            regime_set,
            long_term,
            correlation,
        });
    }
    Ok(profiles)
}

/// Builds the immutable FULL-benchmark cache: `B` items apportioned to the
/// long-term distribution, with freshly sampled features.
pub fn build_full_cache(
    rng: &mut SimRng,
    task: &SyntheticTask,
    pi: &LabelDistribution,
    cache_config: CacheConfig,
) -> Result<LabeledCache> {
    let capacity = cache_config.capacity as u64;
    let targets: Vec<f64> = pi.probs().iter().map(|&p| p * capacity as f64).collect();
    let caps = vec![capacity; pi.len()];
    let counts = apportion(&targets, capacity, &caps)?;
    let mut cache = LabeledCache::new(cache_config, pi.len());
    let mut items = Vec::with_capacity(cache_config.capacity);
    for (label, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            items.push(CacheItem::new(task.sample_item(rng, label)?, label, 0));
        }
    }
    cache.append(items)?;
    cache.mark_immutable();
    Ok(cache)
}

/// Per-round telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    /// Per-slot discrepancy `psi_t`.
    pub psi_t: f64,
    /// Cached label distribution of every client.
    pub per_client_v: Vec<Vec<f64>>,
    /// Mean loss of the (pre-update) global model on the client caches.
    pub train_loss: f64,
    /// Test accuracy of the post-aggregation global model; present every
    /// `eval_interval` rounds.
    pub accuracy: Option<f64>,
    /// Policy discrepancy bound `lambda_t^2`, maximized over clients; absent
    /// for LAZY and FULL.
    pub bound: Option<f64>,
}

/// Completed-run log.
#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    pub config: ExperimentConfig,
    pub records: Vec<RoundRecord>,
}

impl RunLog {
    /// Accuracy at the last evaluated round.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.accuracy)
    }

    /// Mean accuracy over the last tenth of the rounds.
    pub fn late_window_accuracy(&self) -> Option<f64> {
        let window = (self.records.len() / 10).max(1);
        let tail = &self.records[self.records.len() - window..];
        let values: Vec<f64> = tail.iter().filter_map(|r| r.accuracy).collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    /// Accumulated discrepancy over all rounds.
    pub fn accumulated_psi(&self) -> f64 {
        self.records.iter().map(|r| r.psi_t).sum()
    }
}

struct ClientState {
    profile: StreamProfile,
    stream: StreamState,
    cache: LabeledCache,
    features_rng: SimRng,
    replace_rng: SimRng,
}

/// One synchronous federation: global model plus per-client state.
pub struct Federation {
    config: ExperimentConfig,
    task: SyntheticTask,
    test_set: Vec<Example>,
    global: ModelParams,
    clients: Vec<ClientState>,
    round: u64,
}

/// Mean of the client deltas.
pub fn aggregate_deltas(deltas: &[Vec<f64>]) -> Vec<f64> {
    assert!(!deltas.is_empty());
    let k = deltas.len() as f64;
    let mut mean = vec![0.0; deltas[0].len()];
    for delta in deltas {
        for (m, &d) in mean.iter_mut().zip(delta) {
            *m += d;
        }
    }
    for m in mean.iter_mut() {
        *m /= k;
    }
    mean
}

impl Federation {
    /// Builds the full federation state deterministically from the config.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let profiles = build_client_profiles(&config)?;
        let mut task_rng = substream(config.learner.task_seed, GLOBAL_LANE, StreamTag::Task);
        let task = SyntheticTask::build(&mut task_rng, config.num_classes, &config.task_config())?;

        // Test mixture: uniform over the union of client supports.
        let mut supported: Vec<usize> = profiles
            .iter()
            .flat_map(|p| p.support.iter().copied())
            .collect();
        supported.sort_unstable();
        supported.dedup();
        let mut test_rng = substream(config.learner.task_seed, GLOBAL_LANE, StreamTag::TestSet);
        let test_set =
            task.make_test_set(&mut test_rng, &supported, config.learner.test_set_size)?;

        let mut init_rng = substream(config.seed, GLOBAL_LANE, StreamTag::ModelInit);
        let global = ModelParams::init(&mut init_rng, config.model_dims());

        let mut clients = Vec::with_capacity(config.clients);
        for profile in profiles {
            let k = profile.client as u32;
            let stream = StreamState::new(
                &profile.regime_set,
                substream(config.seed, k, StreamTag::Stream),
            );
            let mut features_rng = substream(config.seed, k, StreamTag::Features);
            let cache = if config.policy.kind == PolicyKind::Full {
                build_full_cache(&mut features_rng, &task, &profile.long_term, config.cache)
                    .map_err(|e| Error::for_client(profile.client, e))?
            } else {
                LabeledCache::new(config.cache, config.num_classes)
            };
            let replace_rng = substream(config.seed, k, StreamTag::Replacement);
            clients.push(ClientState {
                profile,
                stream,
                cache,
                features_rng,
                replace_rng,
            });
        }
        Ok(Self {
            config,
            task,
            test_set,
            global,
            clients,
            round: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn global_params(&self) -> &ModelParams {
        &self.global
    }

    pub fn test_set(&self) -> &[Example] {
        &self.test_set
    }

    pub fn client_cache(&self, client: usize) -> &LabeledCache {
        &self.clients[client].cache
    }

    pub fn client_profile(&self, client: usize) -> &StreamProfile {
        &self.clients[client].profile
    }

    /// Training view of a client's cache.
    pub fn client_examples(&self, client: usize) -> Vec<Example> {
        self.clients[client]
            .cache
            .items()
            .map(|item| Example::new(item.features.clone(), item.label))
            .collect()
    }

    /// Policy discrepancy bound for one client at round `t`.
    fn client_bound(&self, client: &ClientState, t: u64) -> Result<Option<f64>> {
        let m = self.config.cache.num_batches();
        let corr = client.profile.correlation;
        let input = |m_eff: usize, t_eff: u64, theta: f64, pi_max_sq: f64| BoundInput {
            m: m_eff,
            gamma: corr.gamma,
            delta_sq: corr.delta_sq,
            theta,
            t: t_eff,
            pi_max_sq,
        };
        let value = match self.config.policy.kind {
            // Before the window is full the cache averages only t batches.
            PolicyKind::Fifo => {
                let m_eff = t.min(m as u64) as usize;
                Some(fifo_bound(&input(m_eff, t, 0.5, 0.0)))
            }
            PolicyKind::Srsr => {
                let theta = self.config.policy.theta.expect("validated");
                let pi_max = client
                    .profile
                    .long_term
                    .probs()
                    .iter()
                    .cloned()
                    .fold(0.0, f64::max);
                // The recursion starts once the cache is full.
                let t_eff = t.saturating_sub(m as u64);
                Some(srsr_bound(&input(m, t_eff, theta, pi_max * pi_max))?)
            }
            PolicyKind::Drsr => Some(drsr_bound(&input(m, t, 0.5, 0.0))?),
            PolicyKind::Lazy | PolicyKind::Full => None,
        };
        Ok(value)
    }

    /// Runs one synchronous round and returns its telemetry.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let t = self.round + 1;
        let num_classes = self.config.num_classes;
        let batch_size = self.config.cache.batch_size;
        let policy = self.config.policy;
        let mut v_all = Vec::with_capacity(self.clients.len());
        let mut pi_all = Vec::with_capacity(self.clients.len());
        let mut deltas = Vec::with_capacity(self.clients.len());
        let mut loss_sum = 0.0;
        let mut bound_max: Option<f64> = None;

        for k in 0..self.clients.len() {
            let client = &mut self.clients[k];
            let (_, counts) =
                advance_stream(&mut client.stream, &client.profile.regime_set, batch_size);
            if policy.kind != PolicyKind::Full {
                let mut batch = Vec::with_capacity(batch_size);
                for (label, &count) in counts.iter().enumerate() {
                    for _ in 0..count {
                        let features = self
                            .task
                            .sample_item(&mut client.features_rng, label)
                            .map_err(|e| Error::for_client(k, e))?;
                        batch.push(CacheItem::new(features, label, t));
                    }
                }
                debug_assert_eq!(count_labels(&batch, num_classes), counts);
                policy_update(&policy, &mut client.cache, batch, t, &mut client.replace_rng)
                    .map_err(|e| Error::for_client(k, e))?;
            }

            let client = &self.clients[k];
            let v = client
                .cache
                .cached_distribution()
                .map_err(|e| Error::for_client(k, e))?;
            let examples = self.client_examples(k);
            loss_sum +=
                forward_loss(&self.global, &examples).map_err(|e| Error::for_client(k, e))?;
            let (_, delta) = local_train(
                &self.global,
                &examples,
                self.config.local_steps,
                self.config.eta_local,
            )
            .map_err(|e| Error::for_client(k, e))?;
            deltas.push(delta);
            let client = &self.clients[k];
            if let Some(b) = self
                .client_bound(client, t)
                .map_err(|e| Error::for_client(k, e))?
            {
                bound_max = Some(bound_max.map_or(b, |acc: f64| acc.max(b)));
            }
            v_all.push(v);
            pi_all.push(client.profile.long_term.clone());
        }

        let mean_delta = aggregate_deltas(&deltas);
        let step = self.config.eta * self.config.eta_local;
        for (w, &d) in self.global.values_mut().iter_mut().zip(&mean_delta) {
            *w += step * d;
        }

        let psi_t = per_slot_discrepancy(&v_all, &pi_all)?;
        let accuracy = if t % self.config.eval_interval == 0 {
            Some(evaluate(&self.global, &self.test_set)?)
        } else {
            None
        };
        self.round = t;
        Ok(RoundRecord {
            round: t,
            psi_t,
            per_client_v: v_all.into_iter().map(Vec::from).collect(),
            train_loss: loss_sum / self.clients.len() as f64,
            accuracy,
            bound: bound_max,
        })
    }

    /// One plain gradient-descent step (rate `rate`) away from `params` on
    /// `data`; the single-client single-step federation round must match it.
    pub fn centralized_step(
        params: &ModelParams,
        data: &[Example],
        rate: f64,
    ) -> Result<ModelParams> {
        let g = gradient(params, data)?;
        let mut next = params.clone();
        for (w, &gi) in next.values_mut().iter_mut().zip(&g) {
            *w -= rate * gi;
        }
        Ok(next)
    }
}

/// Runs a full experiment: `rounds` sequential federation rounds from a
/// fresh state. Deterministic given the config.
pub fn run_experiment(config: ExperimentConfig) -> Result<RunLog> {
    let mut federation = Federation::new(config.clone())?;
    let mut records = Vec::with_capacity(config.rounds as usize);
    for _ in 0..config.rounds {
        records.push(federation.run_round()?);
    }
    Ok(RunLog { config, records })
}

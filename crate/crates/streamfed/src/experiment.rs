//! Experiment front end: config files, multi-seed orchestration, sweeps,
//! bound-verification grids, and CSV/manifest emission.
//!
//! Outputs per simulate invocation: one `rounds_<policy>_<seed>.csv` per
//! run, a `summary.csv` with per-policy mean/std statistics, and a
//! `manifest.json` snapshotting the effective config, its content hash, the
//! seed list, and every output path. Reals are written with 17 significant
//! digits so CSV bodies are diff-stable and byte-identical across reruns.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::{CacheConfig, PolicyConfig, PolicyKind};
use crate::dist::{build_regimes, calibrate_correlation, CorrelationProfile, RegimeSet};
use crate::error::{Error, Result};
use crate::federation::{run_experiment, ExperimentConfig, RunLog};
use crate::metrics::{
    drsr_bound, fifo_bound, monte_carlo_discrepancy, srsr_bound, BoundInput, MonteCarloConfig,
};
use crate::rng::{substream, StreamTag, GLOBAL_LANE};

/// Version string recorded in manifests.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fixed 17-significant-digit decimal formatting for CSV reals.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_real).unwrap_or_default()
}

/// Parses JSON with the offending field path in the error message.
fn parse_json_with_path<T: for<'de> Deserialize<'de>>(text: &str, origin: &Path) -> Result<T> {
    let mut deserializer = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut deserializer).map_err(|e| {
        Error::Config(format!(
            "{}: field '{}': {}",
            origin.display(),
            e.path(),
            e.inner()
        ))
    })
}

/// Reads and validates an experiment config from a JSON file.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let config: ExperimentConfig = parse_json_with_path(&text, path)?;
    config.validate()?;
    Ok(config)
}

/// SHA-256 hex digest of a canonical JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(value)?;
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    /// The effective configuration, with every default materialized.
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    /// Mixture the test set is drawn from.
    pub test_set_mixture: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Paths relative to the output directory. Every listed file exists on
    /// successful exit.
    pub outputs: Vec<String>,
    pub completed: bool,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(path, json)?;
    Ok(())
}

/// Runs a worker closure inside a dedicated rayon pool of `workers` threads;
/// zero keeps the global pool.
pub fn with_worker_pool<T: Send>(workers: usize, task: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        task()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool")
            .install(task)
    }
}

/// Multi-seed simulate options.
#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    pub workers: usize,
}

impl SimulateOptions {
    /// The paper-style default: ten consecutive seeds from the config's base
    /// seed, running the config's own policy.
    pub fn for_config(config: &ExperimentConfig) -> Self {
        Self {
            policies: vec![config.policy.kind],
            seeds: consecutive_seeds(config.seed, 10),
            workers: 0,
        }
    }
}

/// `count` consecutive seeds starting at `base`.
pub fn consecutive_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Per-policy aggregate statistics over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub seeds: usize,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    pub late_acc_mean: f64,
    pub late_acc_std: f64,
    pub psi_mean: f64,
    pub psi_std: f64,
}

/// Everything a simulate invocation produced.
#[derive(Debug)]
pub struct SimulateOutcome {
    pub manifest: RunManifest,
    pub summaries: Vec<PolicySummary>,
    /// Logs in (policy-major, seed-minor) job order.
    pub logs: Vec<RunLog>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn rounds_csv_name(policy: PolicyKind, seed: u64) -> String {
    format!("rounds_{}_{}.csv", policy.name(), seed)
}

fn write_rounds_csv(path: &Path, log: &RunLog) -> Result<()> {
    let mut out = String::new();
    out.push_str("round,policy,psi_t,loss,accuracy,bound\n");
    let policy = log.config.policy.kind.name();
    for r in &log.records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.round,
            policy,
            format_real(r.psi_t),
            format_real(r.train_loss),
            format_opt(r.accuracy),
            format_opt(r.bound),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn summarize(policy: PolicyKind, logs: &[&RunLog]) -> PolicySummary {
    let finals: Vec<f64> = logs.iter().filter_map(|l| l.final_accuracy()).collect();
    let lates: Vec<f64> = logs.iter().filter_map(|l| l.late_window_accuracy()).collect();
    let psis: Vec<f64> = logs.iter().map(|l| l.accumulated_psi()).collect();
    let (final_acc_mean, final_acc_std) = mean_std(&finals);
    let (late_acc_mean, late_acc_std) = mean_std(&lates);
    let (psi_mean, psi_std) = mean_std(&psis);
    PolicySummary {
        policy,
        seeds: logs.len(),
        final_acc_mean,
        final_acc_std,
        late_acc_mean,
        late_acc_std,
        psi_mean,
        psi_std,
    }
}

fn write_summary_csv(path: &Path, summaries: &[PolicySummary]) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "policy,seeds,final_acc_mean,final_acc_std,late_acc_mean,late_acc_std,psi_mean,psi_std\n",
    );
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.policy.name(),
            s.seeds,
            format_real(s.final_acc_mean),
            format_real(s.final_acc_std),
            format_real(s.late_acc_mean),
            format_real(s.late_acc_std),
            format_real(s.psi_mean),
            format_real(s.psi_std),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Runs `run_experiment` for every (policy, seed) pair, writing per-run CSVs,
/// a summary CSV, and a manifest into `out_dir`.
pub fn cmd_simulate(
    config: &ExperimentConfig,
    opts: &SimulateOptions,
    out_dir: &Path,
) -> Result<SimulateOutcome> {
    config.validate()?;
    if opts.seeds.is_empty() {
        return Err(Error::Config("no seeds requested".into()));
    }
    if opts.policies.is_empty() {
        return Err(Error::Config("no policies requested".into()));
    }
    fs::create_dir_all(out_dir)?;
    let started = now_ms();

    let mut jobs: Vec<(PolicyKind, u64)> = Vec::new();
    let mut job_configs: Vec<ExperimentConfig> = Vec::new();
    for &kind in &opts.policies {
        let policy = PolicyConfig::for_kind(kind, config.policy.theta)?;
        for &seed in &opts.seeds {
            jobs.push((kind, seed));
            job_configs.push(config.with_policy(policy).with_seed(seed));
        }
    }

    let run_results: Vec<Result<RunLog>> = with_worker_pool(opts.workers, || {
        job_configs
            .into_par_iter()
            .map(|cfg| {
                let log = run_experiment(cfg)?;
                let name = rounds_csv_name(log.config.policy.kind, log.config.seed);
                write_rounds_csv(&out_dir.join(&name), &log)?;
                Ok(log)
            })
            .collect()
    });

    let mut outputs: Vec<String> = Vec::new();
    let mut logs: Vec<RunLog> = Vec::with_capacity(run_results.len());
    let mut failure: Option<Error> = None;
    for (job, result) in jobs.iter().zip(run_results) {
        match result {
            Ok(log) => {
                outputs.push(rounds_csv_name(job.0, job.1));
                logs.push(log);
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }

    let mut manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        command: "simulate".to_string(),
        config: serde_json::to_value(config)?,
        config_sha256: config_hash(config)?,
        policies: opts.policies.iter().map(|p| p.name().to_string()).collect(),
        seeds: opts.seeds.clone(),
        test_set_mixture: "uniform_over_supported_classes".to_string(),
        started_unix_ms: started,
        finished_unix_ms: 0,
        outputs,
        completed: false,
    };

    if let Some(e) = failure {
        // Flag the partial outputs and surface the first failure.
        manifest.finished_unix_ms = now_ms();
        write_manifest(out_dir, &manifest)?;
        return Err(e);
    }

    let summaries: Vec<PolicySummary> = opts
        .policies
        .iter()
        .map(|&kind| {
            let policy_logs: Vec<&RunLog> = logs
                .iter()
                .filter(|l| l.config.policy.kind == kind)
                .collect();
            summarize(kind, &policy_logs)
        })
        .collect();
    write_summary_csv(&out_dir.join("summary.csv"), &summaries)?;
    manifest.outputs.push("summary.csv".to_string());

    manifest.completed = true;
    manifest.finished_unix_ms = now_ms();
    write_manifest(out_dir, &manifest)?;
    manifest.outputs.push("manifest.json".to_string());
    Ok(SimulateOutcome {
        manifest,
        summaries,
        logs,
    })
}

/// Stream parameters and cells of a bound-verification grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsGrid {
    pub num_classes: usize,
    pub num_regimes: usize,
    pub concentration: f64,
    pub batch_size: usize,
    pub calibration_rounds: usize,
    pub tau_max: usize,
    pub seed: u64,
    pub cells: Vec<serde_json::Value>,
}

impl Default for BoundsGrid {
    fn default() -> Self {
        Self {
            num_classes: 5,
            num_regimes: 10,
            concentration: 0.5,
            batch_size: 30,
            calibration_rounds: 10_000,
            tau_max: 50,
            seed: 42,
            cells: Vec::new(),
        }
    }
}

/// One grid cell: policy, cache size in batches, transition sharpness,
/// optional theta (SRSR), probe round, and trial count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsCell {
    pub policy: PolicyKind,
    pub m: usize,
    pub beta: f64,
    #[serde(default)]
    pub theta: Option<f64>,
    pub t_probe: u64,
    pub n_trials: usize,
}

impl BoundsGrid {
    /// The standard verification grid: every policy over
    /// M in {2, 5, 10}, beta in {0, 4}, theta in {1/3, 2/3} (SRSR),
    /// t in {50, 500}, 2000 trials per cell.
    pub fn verification_default() -> Self {
        let mut grid = Self::default();
        let mut cells = Vec::new();
        for &m in &[2usize, 5, 10] {
            for &beta in &[0.0f64, 4.0] {
                for &t_probe in &[50u64, 500] {
                    for policy in [PolicyKind::Fifo, PolicyKind::Drsr] {
                        cells.push(BoundsCell {
                            policy,
                            m,
                            beta,
                            theta: None,
                            t_probe,
                            n_trials: 2000,
                        });
                    }
                    for &theta in &[1.0 / 3.0, 2.0 / 3.0] {
                        cells.push(BoundsCell {
                            policy: PolicyKind::Srsr,
                            m,
                            beta,
                            theta: Some(theta),
                            t_probe,
                            n_trials: 2000,
                        });
                    }
                }
            }
        }
        grid.cells = cells
            .into_iter()
            .map(|c| serde_json::to_value(c).expect("cell serializes"))
            .collect();
        grid
    }

    fn parse_cells(&self) -> Result<Vec<BoundsCell>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, value)| {
                serde_json::from_value(value.clone())
                    .map_err(|e| Error::Config(format!("cells[{i}]: {e}")))
            })
            .collect()
    }
}

/// Reads and parses a bounds grid from a JSON file.
pub fn load_bounds_grid(path: &Path) -> Result<BoundsGrid> {
    let text = fs::read_to_string(path)?;
    parse_json_with_path(&text, path)
}

/// Result of one verified grid cell.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsRow {
    pub policy: PolicyKind,
    pub m: usize,
    pub beta: f64,
    pub gamma: usize,
    pub delta_sq: f64,
    pub theta: Option<f64>,
    pub t: u64,
    /// Worst-class Monte-Carlo estimate and its standard error.
    pub mc_estimate: f64,
    pub std_err: f64,
    pub bound: f64,
    /// True when every class satisfies `estimate <= bound + 3 SE`.
    pub pass: bool,
}

fn write_bounds_csv(path: &Path, rows: &[BoundsRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str("policy,m,beta,gamma,delta_sq,theta,t,mc_estimate,std_err,bound,pass\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.policy.name(),
            r.m,
            format_real(r.beta),
            r.gamma,
            format_real(r.delta_sq),
            format_opt(r.theta),
            r.t,
            format_real(r.mc_estimate),
            format_real(r.std_err),
            format_real(r.bound),
            r.pass,
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// The bound evaluated for one cell with calibrated stream parameters.
fn cell_bound(cell: &BoundsCell, corr: &CorrelationProfile, pi_max_sq: f64) -> Result<f64> {
    let input = |m: usize, t: u64, theta: f64| BoundInput {
        m,
        gamma: corr.gamma,
        delta_sq: corr.delta_sq,
        theta,
        t,
        pi_max_sq,
    };
    match cell.policy {
        PolicyKind::Fifo => {
            let m_eff = (cell.t_probe.min(cell.m as u64)) as usize;
            Ok(fifo_bound(&input(m_eff, cell.t_probe, 0.5)))
        }
        PolicyKind::Srsr => {
            let theta = cell.theta.ok_or_else(|| {
                Error::Config("SRSR grid cell needs a theta".into())
            })?;
            let t_eff = cell.t_probe.saturating_sub(cell.m as u64);
            srsr_bound(&input(cell.m, t_eff, theta))
        }
        PolicyKind::Drsr => drsr_bound(&input(cell.m, cell.t_probe, 0.5)),
        other => Err(Error::Config(format!(
            "policy {other} has no discrepancy bound"
        ))),
    }
}

/// Runs every grid cell: calibrates (gamma, delta^2) per beta, estimates the
/// discrepancy by Monte Carlo, and checks it against the policy bound.
/// Writes `bounds.csv` and a manifest into `out_dir`.
pub fn cmd_bounds(grid: &BoundsGrid, out_dir: &Path, workers: usize) -> Result<Vec<BoundsRow>> {
    fs::create_dir_all(out_dir)?;
    let started = now_ms();
    let cells = grid.parse_cells()?;

    // Regimes are shared across the grid; the kernel depends on beta.
    let mut regime_rng = substream(grid.seed, GLOBAL_LANE, StreamTag::Regimes);
    let base_regimes = build_regimes(
        &mut regime_rng,
        grid.num_classes,
        grid.num_regimes,
        grid.concentration,
    )?;
    let mut by_beta: BTreeMap<u64, (RegimeSet, CorrelationProfile, f64)> = BTreeMap::new();
    for (i, cell) in cells.iter().enumerate() {
        if !(cell.beta >= 0.0) {
            return Err(Error::Config(format!("cells[{i}]: negative beta")));
        }
        let key = cell.beta.to_bits();
        if by_beta.contains_key(&key) {
            continue;
        }
        let set = RegimeSet::from_regimes(base_regimes.clone(), cell.beta)?;
        let corr = calibrate_correlation(
            &set,
            grid.batch_size,
            grid.calibration_rounds,
            grid.tau_max,
            substream(grid.seed, by_beta.len() as u32, StreamTag::Calibration),
        )?;
        let pi = set.long_term()?;
        let pi_max = pi.probs().iter().cloned().fold(0.0, f64::max);
        by_beta.insert(key, (set, corr, pi_max * pi_max));
    }

    let rows: Vec<BoundsRow> = with_worker_pool(workers, || {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, cell)| {
                let (set, corr, pi_max_sq) = &by_beta[&cell.beta.to_bits()];
                let policy = PolicyConfig::for_kind(cell.policy, cell.theta)
                    .map_err(|e| Error::Config(format!("cells[{i}]: {e}")))?;
                let cache = CacheConfig::new(cell.m * grid.batch_size, grid.batch_size)
                    .map_err(|e| Error::Config(format!("cells[{i}]: {e}")))?;
                let mc = MonteCarloConfig {
                    policy,
                    cache,
                    t_probe: cell.t_probe,
                    n_trials: cell.n_trials,
                    exact_counts: false,
                    seed: grid
                        .seed
                        .wrapping_add((i as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15)),
                };
                let est = monte_carlo_discrepancy(set, &mc)
                    .map_err(|e| Error::Config(format!("cells[{i}]: {e}")))?;
                let bound = cell_bound(cell, corr, *pi_max_sq)
                    .map_err(|e| Error::Config(format!("cells[{i}]: {e}")))?;
                let pass = est
                    .per_class_mean
                    .iter()
                    .zip(&est.per_class_se)
                    .all(|(&m, &se)| m <= bound + 3.0 * se);
                let (_, mc_estimate, std_err) = est.max_class();
                Ok(BoundsRow {
                    policy: cell.policy,
                    m: cell.m,
                    beta: cell.beta,
                    gamma: corr.gamma,
                    delta_sq: corr.delta_sq,
                    theta: cell.theta,
                    t: cell.t_probe,
                    mc_estimate,
                    std_err,
                    bound,
                    pass,
                })
            })
            .collect::<Result<Vec<BoundsRow>>>()
    })?;

    write_bounds_csv(&out_dir.join("bounds.csv"), &rows)?;
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        command: "bounds".to_string(),
        config: serde_json::to_value(grid)?,
        config_sha256: config_hash(grid)?,
        policies: Vec::new(),
        seeds: vec![grid.seed],
        test_set_mixture: String::new(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        outputs: vec!["bounds.csv".to_string()],
        completed: true,
    };
    write_manifest(out_dir, &manifest)?;
    Ok(rows)
}

/// Parameter swept by [`cmd_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Cache capacity `B`; the batch size scales to keep `B_s / B` fixed.
    Capacity,
    /// Batch size `B_s` at fixed capacity.
    BatchSize,
    /// SRSR replacement weight.
    Theta,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Capacity => "B",
            SweepParam::BatchSize => "B_s",
            SweepParam::Theta => "theta",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" | "capacity" => Ok(SweepParam::Capacity),
            "B_s" | "Bs" | "batch_size" => Ok(SweepParam::BatchSize),
            "theta" => Ok(SweepParam::Theta),
            other => Err(Error::Config(format!(
                "unknown sweep parameter '{other}' (expected B, B_s, or theta)"
            ))),
        }
    }
}

/// Applies one sweep value to a copy of the config.
fn apply_sweep_value(
    config: &ExperimentConfig,
    param: SweepParam,
    value: f64,
) -> Result<ExperimentConfig> {
    let mut cfg = config.clone();
    match param {
        SweepParam::Capacity => {
            if value <= 0.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "capacity sweep value {value} is not a positive integer"
                )));
            }
            let capacity = value as usize;
            // Keep the streaming ratio B_s / B fixed.
            let scaled = capacity as f64 * config.cache.batch_size as f64
                / config.cache.capacity as f64;
            if scaled.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "capacity {capacity} does not scale batch_size {} integrally",
                    config.cache.batch_size
                )));
            }
            cfg.cache = CacheConfig::new(capacity, scaled as usize)?;
        }
        SweepParam::BatchSize => {
            if value <= 0.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "batch-size sweep value {value} is not a positive integer"
                )));
            }
            cfg.cache = CacheConfig::new(config.cache.capacity, value as usize)?;
        }
        SweepParam::Theta => {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::Config(format!(
                    "theta sweep value {value} outside (0, 1]"
                )));
            }
            cfg.policy.theta = Some(value);
            if cfg.policy.kind == PolicyKind::Srsr {
                cfg.policy = PolicyConfig::srsr(value)?;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One sweep value's summaries.
#[derive(Debug)]
pub struct SweepCell {
    pub value: f64,
    pub summaries: Vec<PolicySummary>,
}

fn write_sweep_csv(path: &Path, param: SweepParam, cells: &[SweepCell]) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "param,value,policy,seeds,final_acc_mean,final_acc_std,late_acc_mean,late_acc_std,psi_mean,psi_std\n",
    );
    for cell in cells {
        for s in &cell.summaries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                param.name(),
                cell.value,
                s.policy.name(),
                s.seeds,
                format_real(s.final_acc_mean),
                format_real(s.final_acc_std),
                format_real(s.late_acc_mean),
                format_real(s.late_acc_std),
                format_real(s.psi_mean),
                format_real(s.psi_std),
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Runs one simulate per sweep value and writes the merged `sweep.csv`.
///
/// Every derived config is validated before any run starts, so constraint
/// violations (a capacity that is not a batch-size multiple, a theta outside
/// its range) fail fast.
pub fn cmd_sweep(
    config: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    opts: &SimulateOptions,
    out_dir: &Path,
) -> Result<Vec<SweepCell>> {
    if values.is_empty() {
        return Err(Error::Config("no sweep values given".into()));
    }
    let derived: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| apply_sweep_value(config, param, v))
        .collect::<Result<_>>()?;
    fs::create_dir_all(out_dir)?;
    let started = now_ms();

    let mut cells = Vec::with_capacity(values.len());
    let mut outputs = Vec::new();
    for (cfg, &value) in derived.iter().zip(values) {
        let sub = out_dir.join(format!("{}_{}", param.name(), value));
        let outcome = cmd_simulate(cfg, opts, &sub)?;
        for name in &outcome.manifest.outputs {
            outputs.push(format!("{}_{}/{}", param.name(), value, name));
        }
        cells.push(SweepCell {
            value,
            summaries: outcome.summaries,
        });
    }
    write_sweep_csv(&out_dir.join("sweep.csv"), param, &cells)?;
    outputs.push("sweep.csv".to_string());

    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        command: "sweep".to_string(),
        config: serde_json::to_value(config)?,
        config_sha256: config_hash(config)?,
        policies: opts.policies.iter().map(|p| p.name().to_string()).collect(),
        seeds: opts.seeds.clone(),
        test_set_mixture: "uniform_over_supported_classes".to_string(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        outputs,
        completed: true,
    };
    write_manifest(out_dir, &manifest)?;
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::{CalibrationSettings, LearnerSettings, StreamSettings};

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            clients: 2,
            num_classes: 3,
            classes_per_client: 2,
            rounds: 4,
            local_steps: 1,
            eta: 1.0,
            eta_local: 0.05,
            cache: CacheConfig {
                capacity: 20,
                batch_size: 10,
            },
            policy: PolicyConfig {
                kind: PolicyKind::Drsr,
                theta: Some(0.5),
            },
            stream: StreamSettings {
                num_regimes: 3,
                beta: 1.0,
                concentration: 0.5,
            },
            learner: LearnerSettings {
                feature_dim: 4,
                noise_sigma: 1.0,
                hidden_units: 6,
                test_set_size: 60,
                task_seed: 7,
            },
            calibration: CalibrationSettings {
                rounds: 200,
                tau_max: 8,
            },
            eval_interval: 2,
            seed: 3,
        }
    }

    #[test]
    fn format_real_is_fixed_width_scientific() {
        assert_eq!(format_real(0.5), "5.0000000000000000e-1");
        assert_eq!(format_real(1.0), "1.0000000000000000e0");
        // 17 significant digits round-trip f64 exactly.
        let x = 0.1234567890123456789;
        assert_eq!(format_real(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = tiny_config();
        let mut b = tiny_config();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.seed += 1;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }

    #[test]
    fn simulate_writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let opts = SimulateOptions {
            policies: vec![PolicyKind::Drsr, PolicyKind::Lazy],
            seeds: vec![3, 4],
            workers: 1,
        };
        let outcome = cmd_simulate(&cfg, &opts, dir.path()).unwrap();
        assert!(outcome.manifest.completed);
        for name in [
            "rounds_drsr_3.csv",
            "rounds_drsr_4.csv",
            "rounds_lazy_3.csv",
            "rounds_lazy_4.csv",
            "summary.csv",
            "manifest.json",
        ] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        // Every manifest-listed output exists.
        for name in &outcome.manifest.outputs {
            assert!(dir.path().join(name).exists(), "{name} listed but missing");
        }
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 3); // header + 2 policies
        let rounds = fs::read_to_string(dir.path().join("rounds_drsr_3.csv")).unwrap();
        assert_eq!(rounds.lines().count(), 1 + cfg.rounds as usize);
        // eval_interval = 2: accuracy present only on even rounds.
        let lines: Vec<&str> = rounds.lines().collect();
        assert!(lines[1].contains(",,")); // round 1 has empty accuracy field
    }

    #[test]
    fn simulate_single_seed_one_row_per_policy() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.rounds = 1;
        cfg.eval_interval = 1;
        let opts = SimulateOptions {
            policies: vec![PolicyKind::Fifo],
            seeds: vec![9],
            workers: 1,
        };
        cmd_simulate(&cfg, &opts, dir.path()).unwrap();
        let rounds = fs::read_to_string(dir.path().join("rounds_fifo_9.csv")).unwrap();
        assert_eq!(rounds.lines().count(), 2);
    }

    #[test]
    fn simulate_reruns_are_byte_identical() {
        let cfg = tiny_config();
        let opts = SimulateOptions {
            policies: vec![PolicyKind::Srsr],
            seeds: vec![5, 6],
            workers: 2,
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        cmd_simulate(&cfg, &opts, dir_a.path()).unwrap();
        cmd_simulate(&cfg, &opts, dir_b.path()).unwrap();
        for name in ["rounds_srsr_5.csv", "rounds_srsr_6.csv", "summary.csv"] {
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let b = fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
        }
    }

    #[test]
    fn bounds_empty_grid_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let grid = BoundsGrid::default();
        let rows = cmd_bounds(&grid, dir.path(), 1).unwrap();
        assert!(rows.is_empty());
        let csv = fs::read_to_string(dir.path().join("bounds.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("policy,m,beta,"));
    }

    #[test]
    fn bounds_malformed_row_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut grid = BoundsGrid::default();
        grid.cells = vec![
            serde_json::json!({"policy": "fifo", "m": 2, "beta": 0.0, "t_probe": 10, "n_trials": 100}),
            serde_json::json!({"policy": "fifo", "m": 2}),
        ];
        grid.calibration_rounds = 200;
        grid.tau_max = 10;
        let err = cmd_bounds(&grid, dir.path(), 1).unwrap_err();
        assert!(err.to_string().contains("cells[1]"), "{err}");
    }

    #[test]
    fn bounds_small_grid_runs_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let mut grid = BoundsGrid {
            num_classes: 3,
            num_regimes: 4,
            batch_size: 10,
            calibration_rounds: 500,
            tau_max: 10,
            ..BoundsGrid::default()
        };
        grid.cells = vec![
            serde_json::to_value(BoundsCell {
                policy: PolicyKind::Fifo,
                m: 5,
                beta: 0.0,
                theta: None,
                t_probe: 20,
                n_trials: 200,
            })
            .unwrap(),
            serde_json::to_value(BoundsCell {
                policy: PolicyKind::Srsr,
                m: 5,
                beta: 0.0,
                theta: Some(0.5),
                t_probe: 20,
                n_trials: 200,
            })
            .unwrap(),
        ];
        let rows = cmd_bounds(&grid, dir.path(), 2).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!(row.bound > 0.0);
            assert!(row.mc_estimate >= 0.0);
        }
        let csv = fs::read_to_string(dir.path().join("bounds.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn sweep_scales_batch_size_with_capacity() {
        let cfg = tiny_config(); // 20 / 10: ratio one half
        let scaled = apply_sweep_value(&cfg, SweepParam::Capacity, 40.0).unwrap();
        assert_eq!(scaled.cache.capacity, 40);
        assert_eq!(scaled.cache.batch_size, 20);
        // 25 * 0.5 is not an integer batch size.
        assert!(apply_sweep_value(&cfg, SweepParam::Capacity, 25.0).is_err());
    }

    #[test]
    fn sweep_validates_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let opts = SimulateOptions {
            policies: vec![PolicyKind::Drsr],
            seeds: vec![1],
            workers: 1,
        };
        // Second value invalid: nothing may run.
        let err = cmd_sweep(
            &cfg,
            SweepParam::Theta,
            &[0.5, 1.5],
            &opts,
            dir.path(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("1.5"));
        assert!(!dir.path().join("sweep.csv").exists());
        assert!(!dir.path().join("theta_0.5").exists());
    }

    #[test]
    fn sweep_single_value_matches_simulate() {
        let cfg = tiny_config();
        let opts = SimulateOptions {
            policies: vec![PolicyKind::Drsr],
            seeds: vec![3],
            workers: 1,
        };
        let sweep_dir = tempfile::tempdir().unwrap();
        let sim_dir = tempfile::tempdir().unwrap();
        let cells = cmd_sweep(
            &cfg,
            SweepParam::BatchSize,
            &[10.0],
            &opts,
            sweep_dir.path(),
        )
        .unwrap();
        cmd_simulate(&cfg, &opts, sim_dir.path()).unwrap();
        let a = fs::read(sweep_dir.path().join("B_s_10/rounds_drsr_3.csv")).unwrap();
        let b = fs::read(sim_dir.path().join("rounds_drsr_3.csv")).unwrap();
        assert_eq!(a, b);
        assert_eq!(cells.len(), 1);
    }

    #[test]
    fn consecutive_seed_helper() {
        assert_eq!(consecutive_seeds(7, 3), vec![7, 8, 9]);
    }

    #[test]
    fn load_config_reports_field_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, r#"{"clients": "ten"}"#).unwrap();
        let err = load_experiment_config(&path).unwrap_err();
        assert!(err.to_string().contains("clients"), "{err}");
        // Unknown fields are rejected to catch typos.
        fs::write(&path, r#"{"client": 3}"#).unwrap();
        assert!(load_experiment_config(&path).is_err());
        // A minimal valid config inherits defaults.
        fs::write(&path, r#"{"seed": 1}"#).unwrap();
        let cfg = load_experiment_config(&path).unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.clients, 10);
    }
}

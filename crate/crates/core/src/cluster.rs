//! One-round coordinator/worker execution.
//!
//! Every worker receives only its own shard, samples the subposterior,
//! summarises it and returns a [`WorkerResult`]. The coordinator waits for
//! all results and combines them; workers never talk to each other.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::conjugate_subposterior;
use crate::evidence::{
    self, chib_log_evidence_at_mean, combine_evidence, conditional_isub, importance_subposterior,
    laplace_metropolis_subposterior, log_gaussian_product_integral, EvidenceEstimate, EvidenceMethod,
};
use crate::exec;
use crate::linalg;
use crate::model::{log_alpha, Dataset, ModelSpec, Shard, Subposterior};
use crate::samplers::{
    chain_moments, effective_sample_size, find_mode, initial_point_for, pg_gibbs_logistic, rwmh_chain, Chain,
    ConditionalGaussianStream, GaussianMoments, RwmhConfig,
};
use crate::sharding::ShardPlan;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_BURN_IN: usize = 2_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Gaussian approximation of every subposterior.
    Approx,
    /// Polya-Gamma conditional Gaussians (logistic likelihood, normal prior).
    Conditional,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approx" => Ok(Mode::Approx),
            "conditional" => Ok(Mode::Conditional),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Local evidence estimator run on each worker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalMethod {
    Chib,
    Importance,
    Laplace,
}

impl std::str::FromStr for LocalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chib" => Ok(LocalMethod::Chib),
            "importance" => Ok(LocalMethod::Importance),
            "laplace" => Ok(LocalMethod::Laplace),
            other => Err(Error::Config(format!("unknown evidence method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub mode: Mode,
    pub method: LocalMethod,
    /// Total iterations per chain, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    pub master_seed: u64,
    pub parallelism: usize,
    pub importance_draws: usize,
    pub inflation: f64,
    /// Closed-form moments and evidences for conjugate linear models in
    /// place of sampling.
    #[serde(default)]
    pub analytic_moments: bool,
}

impl ClusterConfig {
    pub fn new(mode: Mode, method: LocalMethod) -> Self {
        Self {
            mode,
            method,
            n_samples: DEFAULT_SAMPLES,
            burn_in: DEFAULT_BURN_IN,
            master_seed: 0,
            parallelism: exec::default_parallelism(),
            importance_draws: evidence::DEFAULT_IMPORTANCE_SAMPLES,
            inflation: evidence::DEFAULT_INFLATION,
            analytic_moments: false,
        }
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if !self.analytic_moments && self.n_samples <= self.burn_in {
            return Err(Error::Config(format!(
                "samples ({}) must exceed burn-in ({})",
                self.n_samples, self.burn_in
            )));
        }
        if self.mode == Mode::Conditional && !model.is_logistic_normal() {
            return Err(Error::Config(format!(
                "model {}: conditional mode needs a logistic likelihood with a normal prior",
                model.model_id
            )));
        }
        if self.method == LocalMethod::Chib && !self.analytic_moments && !model.is_logistic_normal() {
            return Err(Error::Config(format!(
                "model {}: Chib's estimator needs Polya-Gamma conditionals (logistic, normal prior)",
                model.model_id
            )));
        }
        Ok(())
    }
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of shard `s`: the `(s+1)`-th output of a SplitMix64 stream started
/// at `master`, so the seeds of existing shards do not depend on `S`.
pub fn derive_seed(master: u64, shard_id: usize) -> u64 {
    splitmix64(master.wrapping_add((shard_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

#[derive(Clone, Debug)]
pub struct WorkerTask {
    pub shard: Shard,
    pub model: ModelSpec,
    pub splits: usize,
    pub config: ClusterConfig,
    pub seed: u64,
}

impl WorkerTask {
    pub fn new(shard: Shard, model: ModelSpec, splits: usize, config: ClusterConfig) -> Self {
        let seed = derive_seed(config.master_seed, shard.shard_id);
        Self {
            shard,
            model,
            splits,
            config,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalEvidence {
    pub method: EvidenceMethod,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_err: Option<f64>,
}

/// The only payload sent from a worker to the coordinator. Field order is
/// the canonical key order of the encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerResult {
    pub schema_version: u32,
    pub shard_id: usize,
    pub model_id: String,
    pub n_obs: usize,
    pub dim: usize,
    pub n_splits: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub mean: Vec<f64>,
    pub cov_row_major: Vec<f64>,
    pub log_local_evidence: LocalEvidence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional_stream_path: Option<String>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

impl WorkerResult {
    pub fn moments(&self) -> Result<GaussianMoments> {
        GaussianMoments::from_slices(&self.mean, &self.cov_row_major)
    }

    pub fn local_estimate(&self) -> EvidenceEstimate {
        EvidenceEstimate {
            log_value: self.log_local_evidence.value,
            mc_std_err: self.log_local_evidence.std_err,
            method: self.log_local_evidence.method,
            n_samples_used: self.n_samples,
            ess: self.ess,
            low_ess: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        if self.n_obs == 0 {
            return Err(Error::Validation("n_obs must be at least 1".into()));
        }
        if self.mean.len() != self.dim || self.cov_row_major.len() != self.dim * self.dim {
            return Err(Error::Validation(format!(
                "dimension {} does not match mean ({}) or covariance ({}) lengths",
                self.dim,
                self.mean.len(),
                self.cov_row_major.len()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.mean) || !finite(&self.cov_row_major) {
            return Err(Error::Validation("non-finite moments".into()));
        }
        if !self.log_local_evidence.value.is_finite() {
            return Err(Error::Validation("local evidence is not finite".into()));
        }
        if let Some(se) = self.log_local_evidence.std_err {
            if !(se >= 0.0 && se.is_finite()) {
                return Err(Error::Validation(format!("invalid standard error {se}")));
            }
        }
        if let Some(a) = self.acceptance_rate {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Validation(format!("acceptance rate {a} outside [0, 1]")));
            }
        }
        if self.ess.is_some_and(|e| !e.is_finite()) {
            return Err(Error::Validation("non-finite ESS".into()));
        }
        self.moments()
            .map_err(|e| Error::Validation(format!("covariance does not reconstruct: {e}")))?;
        Ok(())
    }

    /// Canonical encoding: fixed key order, shortest round-trip floats, one
    /// trailing newline.
    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = serde_json::to_vec(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_slice(bytes)?;
        match probe.schema_version {
            Some(SCHEMA_VERSION) => {}
            Some(found) => {
                return Err(Error::SchemaVersion {
                    found,
                    expected: SCHEMA_VERSION,
                })
            }
            None => return Err(Error::Validation("missing schema_version".into())),
        }
        let r: WorkerResult = serde_json::from_slice(bytes)?;
        r.validate()?;
        Ok(r)
    }

    pub fn file_name(shard_id: usize) -> String {
        format!("result_{shard_id}.json")
    }

    pub fn write_file(&self, path: &Path) -> Result<u64> {
        let bytes = self.encode()?;
        std::fs::write(path, &bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}

pub fn stream_file_name(shard_id: usize) -> String {
    format!("cond_{shard_id}.ndjson")
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerOutput {
    pub result: WorkerResult,
    pub stream: Option<ConditionalGaussianStream>,
}

impl WorkerOutput {
    /// Bytes sent to the coordinator: the encoded result plus any stream.
    pub fn payload_bytes(&self) -> Result<u64> {
        let mut total = self.result.encode()?.len() as u64;
        if let Some(st) = &self.stream {
            let mut buf = Vec::new();
            st.write_to(&mut buf)?;
            total += buf.len() as u64;
        }
        Ok(total)
    }

    /// Writes `result_<s>.json` and, when present, `cond_<s>.ndjson`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        let s = self.result.shard_id;
        if let Some(st) = &self.stream {
            st.write_file(&dir.join(stream_file_name(s)))?;
        }
        self.result.write_file(&dir.join(WorkerResult::file_name(s)))?;
        Ok(())
    }
}

fn chain_summary(chain: &Chain) -> Result<(GaussianMoments, f64)> {
    Ok((chain_moments(chain)?, effective_sample_size(chain)))
}

pub fn run_worker(task: &WorkerTask) -> Result<WorkerOutput> {
    run_worker_inner(task).map_err(|e| e.in_shard(task.shard.shard_id))
}

fn run_worker_inner(task: &WorkerTask) -> Result<WorkerOutput> {
    let cfg = &task.config;
    cfg.validate(&task.model)?;
    let shard = &task.shard;
    let sub = Subposterior::new(&task.model, &shard.data, task.splits)?;
    let dim = sub.dim();

    let mut acceptance = None;
    let mut ess = None;
    let mut stream = None;
    let n_kept = cfg.n_samples.saturating_sub(cfg.burn_in);
    let (moments, local) = if cfg.analytic_moments {
        let (m, local) = conjugate_subposterior(&task.model, &shard.data, task.splits)?;
        (m, EvidenceEstimate::new(local, EvidenceMethod::ExactOracle, 0))
    } else {
        let use_gibbs = cfg.mode == Mode::Conditional || cfg.method == LocalMethod::Chib;
        let (chain, gibbs_stream) = if use_gibbs {
            let (c, s) = pg_gibbs_logistic(shard, &task.model, task.splits, cfg.n_samples, cfg.burn_in, task.seed)?;
            (c, Some(s))
        } else {
            let mode = find_mode(&sub, &initial_point_for(&sub))?;
            let rw = RwmhConfig::new(cfg.n_samples, cfg.burn_in, task.seed).with_init_cov(mode.covariance());
            let c = rwmh_chain(|t| sub.log_density(t), &mode.theta, &rw)?;
            acceptance = c.acceptance_rate;
            (c, None)
        };
        let (m, e) = chain_summary(&chain)?;
        ess = Some(e);
        let local = match cfg.method {
            LocalMethod::Chib => {
                let st = gibbs_stream.as_ref().expect("Gibbs stream");
                chib_log_evidence_at_mean(&chain, st, &task.model, shard, task.splits)?
            }
            LocalMethod::Importance => {
                let mode = find_mode(&sub, &initial_point_for(&sub))?;
                let proposal = GaussianMoments::new(linalg::Vector::from_column_slice(&mode.theta), mode.covariance())?;
                let est = importance_subposterior(
                    &sub,
                    &proposal,
                    cfg.importance_draws,
                    cfg.inflation,
                    crate::cluster::splitmix64(task.seed ^ 0x1f0f_1f0f_1f0f_1f0f),
                )?;
                if est.low_ess {
                    return Err(Error::Estimator(format!(
                        "importance sampling effective sample size {:.1} is below {}",
                        est.ess.unwrap_or(0.0),
                        evidence::LOW_ESS
                    )));
                }
                est
            }
            LocalMethod::Laplace => laplace_metropolis_subposterior(&m, &sub, n_kept)?,
        };
        if cfg.mode == Mode::Conditional {
            stream = gibbs_stream;
        }
        (m, local)
    };
    if !local.log_value.is_finite() {
        return Err(Error::Estimator(format!("local evidence is {}", local.log_value)));
    }
    let result = WorkerResult {
        schema_version: SCHEMA_VERSION,
        shard_id: shard.shard_id,
        model_id: task.model.model_id.clone(),
        n_obs: shard.n_obs(),
        dim,
        n_splits: task.splits,
        n_samples: if cfg.analytic_moments { 0 } else { n_kept },
        seed: task.seed,
        mean: moments.mean.iter().copied().collect(),
        cov_row_major: linalg::to_row_major(&moments.cov),
        log_local_evidence: LocalEvidence {
            method: local.method,
            value: local.log_value,
            std_err: local.mc_std_err,
        },
        acceptance_rate: acceptance,
        ess,
        conditional_stream_path: stream.as_ref().map(|_| stream_file_name(shard.shard_id)),
    };
    result.validate()?;
    Ok(WorkerOutput { result, stream })
}

/// Runs one worker per shard of the plan, `config.parallelism` at a time.
/// Results come back ordered by shard id.
pub fn run_cluster(data: &Dataset, plan: &ShardPlan, model: &ModelSpec, config: &ClusterConfig) -> Result<Vec<WorkerOutput>> {
    config.validate(model)?;
    model.validate_for(data)?;
    let tasks: Vec<WorkerTask> = plan
        .shards(data)?
        .into_iter()
        .map(|s| WorkerTask::new(s, model.clone(), plan.splits, config.clone()))
        .collect();
    let outcomes = exec::map_ordered(&tasks, config.parallelism, run_worker);
    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Workers(failures));
    }
    Ok(results)
}

/// Coordinator-side recombination of one model's worker results.
pub fn combine_results(
    model: &ModelSpec,
    results: &[WorkerResult],
    streams: Option<&[ConditionalGaussianStream]>,
    mode: Mode,
) -> Result<EvidenceEstimate> {
    let first = results
        .first()
        .ok_or_else(|| Error::Combination("no worker results".into()))?;
    let splits = first.n_splits;
    let mut ordered: Vec<&WorkerResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.shard_id);
    for (s, r) in ordered.iter().enumerate() {
        if r.shard_id != s {
            return Err(Error::Combination(format!("result for shard {s} is missing")));
        }
        if r.n_splits != splits || r.model_id != model.model_id || r.dim != first.dim {
            return Err(Error::Combination(format!(
                "result of shard {s} belongs to a different run ({} / S={} / dim {})",
                r.model_id, r.n_splits, r.dim
            )));
        }
    }
    if ordered.len() != splits {
        return Err(Error::Combination(format!(
            "{} results for S = {splits} (first missing shard {})",
            ordered.len(),
            ordered.len()
        )));
    }
    let local: Vec<EvidenceEstimate> = ordered.iter().map(|r| r.local_estimate()).collect();
    let log_a = log_alpha(model, splits)?;
    let (log_isub, method) = match mode {
        Mode::Approx => {
            let parts = ordered.iter().map(|r| r.moments()).collect::<Result<Vec<_>>>()?;
            (log_gaussian_product_integral(&parts)?, EvidenceMethod::CombinedApprox)
        }
        Mode::Conditional => {
            let streams = streams.ok_or_else(|| Error::Combination("conditional mode needs the streams".into()))?;
            if streams.len() != splits {
                return Err(Error::Combination(format!("{} streams for S = {splits}", streams.len())));
            }
            let n = streams.iter().map(|s| s.len()).min().unwrap_or(0);
            (conditional_isub(streams, n)?, EvidenceMethod::CombinedConditional)
        }
    };
    combine_evidence(log_a, &local, log_isub, splits, method)
}

pub fn combine_outputs(model: &ModelSpec, outputs: &[WorkerOutput], mode: Mode) -> Result<EvidenceEstimate> {
    let results: Vec<WorkerResult> = outputs.iter().map(|o| o.result.clone()).collect();
    let streams: Option<Vec<ConditionalGaussianStream>> = outputs.iter().map(|o| o.stream.clone()).collect();
    combine_results(model, &results, streams.as_deref(), mode)
}

/// Reads `result_<s>.json` (and `cond_<s>.ndjson` in conditional mode) for
/// every shard of a run directory.
pub fn read_results_dir(dir: &Path) -> Result<(Vec<WorkerResult>, Vec<Option<ConditionalGaussianStream>>)> {
    let mut results = Vec::new();
    for s in 0.. {
        let path: PathBuf = dir.join(WorkerResult::file_name(s));
        if !path.exists() {
            break;
        }
        results.push(WorkerResult::read_file(&path)?);
    }
    let streams = results
        .iter()
        .map(|r| {
            r.conditional_stream_path
                .as_ref()
                .map(|p| ConditionalGaussianStream::read_file(&dir.join(p)))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((results, streams))
}

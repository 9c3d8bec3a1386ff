//! The `rjmcmc` subcommand: one reversible-jump sampler per shard, then the
//! distributed Bayes factors of the requested model pairs.

use std::path::{Path, PathBuf};

use dmev::cluster::derive_seed;
use dmev::exec::map_ordered;
use dmev::rjmcmc::{distributed_log_bf, rjmcmc_sample, BetaBinomial, ModelIndicator, RJOutput, RjConfig, DEFAULT_MIN_VISITS};
use dmev::sharding::Strategy;
use dmev::{Dataset, Error, ModelSpec, Result};
use serde::Serialize;

use crate::pipeline::{make_plan, plan_seed, PLAN_FILE};

#[derive(Clone, Debug)]
pub struct RjRun {
    pub data: PathBuf,
    pub model: ModelSpec,
    pub splits: usize,
    pub strategy: Strategy,
    pub kmeans_k: usize,
    /// Iterations per shard, burn-in included.
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub always_active: Vec<usize>,
    pub model_prior: BetaBinomial,
    pub min_visits: u64,
    /// Model pairs as bit-string keys.
    pub compare: Vec<(String, String)>,
    pub out: Option<PathBuf>,
}

impl RjRun {
    pub fn new(data: PathBuf, model: ModelSpec) -> Self {
        Self {
            data,
            model,
            splits: 1,
            strategy: Strategy::Uniform,
            kmeans_k: dmev::sharding::DEFAULT_KMEANS_K,
            samples: dmev::rjmcmc::DEFAULT_ITERATIONS,
            burn_in: dmev::rjmcmc::DEFAULT_ITERATIONS / 5,
            seed: 0,
            parallelism: 1,
            always_active: Vec::new(),
            model_prior: BetaBinomial::default(),
            min_visits: DEFAULT_MIN_VISITS,
            compare: Vec::new(),
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BayesFactor {
    pub m1: String,
    pub m2: String,
    pub log_bf: f64,
}

#[derive(Clone, Debug)]
pub struct RjSummary {
    pub outputs: Vec<RJOutput>,
    pub bayes_factors: Vec<BayesFactor>,
}

pub fn rj_file_name(shard_id: usize) -> String {
    format!("rj_{shard_id}.json")
}

/// Parses `KEY1:KEY2`.
pub fn parse_pair(s: &str) -> Result<(String, String)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("model pair `{s}` must look like 11101:10011")))?;
    ModelIndicator::from_key(a)?;
    ModelIndicator::from_key(b)?;
    Ok((a.to_string(), b.to_string()))
}

pub fn run_rj(run: &RjRun) -> Result<RjSummary> {
    if !run.data.is_file() {
        return Err(Error::Input(format!("data file {} does not exist", run.data.display())));
    }
    let data = Dataset::from_csv(&run.data)?;
    run.model.validate_for(&data)?;
    let plan = make_plan(&data, run.splits, run.strategy, run.kmeans_k, plan_seed(run.seed))?;
    let shards = plan.shards(&data)?;
    let outputs = map_ordered(&shards, run.parallelism, |shard| {
        let mut cfg = RjConfig::new(run.samples, run.burn_in, derive_seed(run.seed, shard.shard_id));
        cfg.always_active = run.always_active.clone();
        cfg.model_prior = run.model_prior;
        cfg.min_visits = run.min_visits;
        rjmcmc_sample(shard, &run.model, plan.splits, &cfg).map_err(|e| e.in_shard(shard.shard_id))
    });
    let mut ok = Vec::with_capacity(outputs.len());
    let mut failed = Vec::new();
    for o in outputs {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => failed.push(e),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Workers(failed));
    }
    if let Some(out) = &run.out {
        std::fs::create_dir_all(out)?;
        plan.write_file(&out.join(PLAN_FILE))?;
        for o in &ok {
            std::fs::write(out.join(rj_file_name(o.shard_id)), o.to_json())?;
        }
    }
    let mut bayes_factors = Vec::with_capacity(run.compare.len());
    for (a, b) in &run.compare {
        let m1 = ModelIndicator::from_key(a)?;
        let m2 = ModelIndicator::from_key(b)?;
        if m1.0.len() != run.model.dim || m2.0.len() != run.model.dim {
            return Err(Error::Config(format!(
                "model keys must have {} bits, got {a} and {b}",
                run.model.dim
            )));
        }
        bayes_factors.push(BayesFactor {
            m1: a.clone(),
            m2: b.clone(),
            log_bf: distributed_log_bf(&ok, &run.model, &m1, &m2)?,
        });
    }
    if let Some(out) = &run.out {
        write_bayes_factors(&out.join("bayes_factors.json"), &bayes_factors)?;
    }
    Ok(RjSummary {
        outputs: ok,
        bayes_factors,
    })
}

fn write_bayes_factors(path: &Path, bfs: &[BayesFactor]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(bfs)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

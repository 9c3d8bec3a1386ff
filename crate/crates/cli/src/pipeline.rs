//! Split, run one worker per shard, combine: the `run` subcommand.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dmev::cluster::{combine_outputs, combine_results, read_results_dir, run_cluster, splitmix64, ClusterConfig, Mode, WorkerOutput, WorkerResult};
use dmev::evidence::{EvidenceEstimate, ModelComparison};
use dmev::sharding::{stratified_split, uniform_split, ShardPlan, Strategy};
use dmev::{Dataset, Error, ModelSpec, Result};
use serde::{Deserialize, Serialize};

use crate::config::{load_models, RunConfig};
use crate::report::{emit_report, Report};

pub const EVIDENCE_FILE: &str = "evidence.json";
pub const PLAN_FILE: &str = "plan.json";
pub const EVIDENCE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEvidence {
    pub model_id: String,
    pub estimate: EvidenceEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceFile {
    pub schema_version: u32,
    #[serde(rename = "S")]
    pub splits: usize,
    pub mode: Mode,
    pub models: Vec<ModelEvidence>,
    pub comparison: ModelComparison,
}

impl EvidenceFile {
    pub fn new(splits: usize, mode: Mode, models: Vec<ModelEvidence>) -> Result<Self> {
        let comparison = ModelComparison::new(
            models.iter().map(|m| m.model_id.clone()).collect(),
            models.iter().map(|m| m.estimate.log_value).collect(),
            None,
        )?;
        Ok(Self {
            schema_version: EVIDENCE_SCHEMA_VERSION,
            splits,
            mode,
            models,
            comparison,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        let f: Self = serde_json::from_str(&text)?;
        if f.schema_version != EVIDENCE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: f.schema_version,
                expected: EVIDENCE_SCHEMA_VERSION,
            });
        }
        Ok(f)
    }
}

/// Seed of the shard plan, kept apart from the worker seeds.
pub fn plan_seed(seed: u64) -> u64 {
    splitmix64(seed ^ 0x706c_616e_0000_0000)
}

pub fn make_plan(data: &Dataset, splits: usize, strategy: Strategy, kmeans_k: usize, seed: u64) -> Result<ShardPlan> {
    match strategy {
        Strategy::Uniform => uniform_split(data.n, splits, seed),
        Strategy::Stratified => stratified_split(data, splits, kmeans_k, seed),
    }
}

/// Directory holding a model's worker files. A single-model directory may
/// keep them at its root.
pub fn model_dir(root: &Path, model_id: &str) -> PathBuf {
    let nested = root.join(model_id);
    if !nested.is_dir() && root.join(WorkerResult::file_name(0)).is_file() {
        return root.to_path_buf();
    }
    nested
}

pub fn cluster_config(cfg: &RunConfig) -> ClusterConfig {
    let mut c = ClusterConfig::new(cfg.mode, cfg.evidence);
    c.n_samples = cfg.samples;
    c.burn_in = cfg.burn_in;
    c.master_seed = cfg.seed;
    c.parallelism = cfg.threads();
    c.importance_draws = cfg.importance_draws;
    c.inflation = cfg.inflation;
    c.analytic_moments = cfg.analytic_moments;
    c
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub evidence: EvidenceFile,
    pub report: Report,
}

#[derive(Serialize)]
struct Timing<'a> {
    model_id: &'a str,
    wall_time_ms: f64,
}

fn log_access(model: &ModelSpec, plan: &ShardPlan, outputs: &[WorkerOutput]) {
    for o in outputs {
        let s = o.result.shard_id;
        let line = serde_json::json!({
            "event": "worker_rows",
            "model_id": model.model_id,
            "shard": s,
            "rows_read": o.result.n_obs,
            "rows_assigned": plan.rows(s).len(),
        });
        eprintln!("{line}");
    }
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let data = Dataset::from_csv(&cfg.data)?;
    let models = load_models(&cfg.models)?;
    for m in &models {
        m.validate_for(&data)?;
    }
    std::fs::create_dir_all(&cfg.out)?;
    let plan = make_plan(&data, cfg.splits, cfg.strategy, cfg.kmeans_k, plan_seed(cfg.seed))?;
    plan.write_file(&cfg.out.join(PLAN_FILE))?;

    let config = cluster_config(cfg);
    let mut per_model = Vec::with_capacity(models.len());
    let mut timings = Vec::new();
    for model in &models {
        let start = Instant::now();
        let outputs = run_cluster(&data, &plan, model, &config)?;
        if cfg.verbose {
            log_access(model, &plan, &outputs);
        }
        let dir = cfg.out.join(&model.model_id);
        std::fs::create_dir_all(&dir)?;
        for o in &outputs {
            o.write_to_dir(&dir)?;
        }
        let estimate = combine_outputs(model, &outputs, cfg.mode)?;
        timings.push(Timing {
            model_id: &model.model_id,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        per_model.push(ModelEvidence {
            model_id: model.model_id.clone(),
            estimate,
        });
    }
    let evidence = EvidenceFile::new(cfg.splits, cfg.mode, per_model)?;
    evidence.write(&cfg.out.join(EVIDENCE_FILE))?;
    if cfg.timings {
        let mut text = serde_json::to_string_pretty(&timings)?;
        text.push('\n');
        std::fs::write(cfg.out.join("timings.json"), text)?;
    }
    let report = emit_report(&cfg.out)?;
    Ok(RunSummary { evidence, report })
}

/// Coordinator step of the file-exchange deployment: combines worker files
/// already present under `dir`.
pub fn combine_dir(dir: &Path, models: &[ModelSpec], mode: Mode) -> Result<EvidenceFile> {
    let mut per_model = Vec::with_capacity(models.len());
    let mut splits = None;
    for model in models {
        let mdir = model_dir(dir, &model.model_id);
        let (results, streams) = read_results_dir(&mdir)?;
        if results.is_empty() {
            return Err(Error::Combination(format!(
                "no worker results for model {} in {}",
                model.model_id,
                mdir.display()
            )));
        }
        let s = results[0].n_splits;
        if *splits.get_or_insert(s) != s {
            return Err(Error::Combination("models were run with different S".into()));
        }
        let streams: Option<Vec<_>> = streams.into_iter().collect();
        let estimate = combine_results(model, &results, streams.as_deref(), mode)?;
        per_model.push(ModelEvidence {
            model_id: model.model_id.clone(),
            estimate,
        });
    }
    let splits = splits.ok_or_else(|| Error::Config("no models to combine".into()))?;
    let evidence = EvidenceFile::new(splits, mode, per_model)?;
    evidence.write(&dir.join(EVIDENCE_FILE))?;
    Ok(evidence)
}

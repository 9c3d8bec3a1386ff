//! The `diagnose` subcommand: repeated runs of a synthetic scenario over a
//! range of S, with error metrics against a reference evidence.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use dmev::cluster::{combine_outputs, derive_seed, run_cluster, ClusterConfig, LocalMethod, Mode};
use dmev::diagnostics::{
    error_table_metrics, exact_evidence_conjugate_gaussian, make_synthetic_n, write_metrics_csv, write_report_csv,
    ErrorReport, ReportRow, Scenario,
};
use dmev::linalg::Matrix;
use dmev::sharding::uniform_split;
use dmev::{Error, Likelihood, ModelSpec, Prior, Result};

use crate::pipeline::plan_seed;

#[derive(Clone, Debug)]
pub struct DiagnoseRun {
    pub scenario: Scenario,
    pub n: Option<usize>,
    pub splits: Vec<usize>,
    pub repetitions: usize,
    pub mode: Mode,
    pub evidence: LocalMethod,
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub analytic_moments: bool,
    pub timings: bool,
    pub out: PathBuf,
}

#[derive(Clone, Debug)]
pub struct DiagnoseSummary {
    pub rows: Vec<ReportRow>,
    pub metrics: Vec<(String, ErrorReport)>,
    /// Reference log evidence per model and where it came from.
    pub references: BTreeMap<String, (f64, &'static str)>,
}

/// Closed-form evidence when the model is conjugate linear-Gaussian.
pub fn exact_reference(model: &ModelSpec, data: &dmev::Dataset) -> Result<Option<f64>> {
    let (Likelihood::LinearGaussianKnownVar { noise_var }, Prior::Normal { mean, cov }) = (&model.likelihood, &model.prior)
    else {
        return Ok(None);
    };
    let d = model.dim;
    let v0 = Matrix::from_fn(d, d, |a, b| cov[a][b]);
    let cols = model.columns(data.p);
    exact_evidence_conjugate_gaussian(&data.columns(&cols), mean, &v0, *noise_var).map(Some)
}

pub fn run_diagnose(run: &DiagnoseRun) -> Result<DiagnoseSummary> {
    if run.splits.is_empty() || run.splits.contains(&0) {
        return Err(Error::Config("S values must be positive".into()));
    }
    if run.repetitions < 2 {
        return Err(Error::Config("diagnose needs at least 2 repetitions".into()));
    }
    let n = run.n.unwrap_or(run.scenario.default_n());
    let (data, models) = make_synthetic_n(run.scenario, n, run.seed)?;
    let mut rows = Vec::new();
    let mut estimates: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for rep in 0..run.repetitions {
        let rep_seed = derive_seed(run.seed, rep);
        for &s in &run.splits {
            let plan = uniform_split(data.n, s, plan_seed(rep_seed))?;
            for model in &models {
                let mut config = ClusterConfig::new(run.mode, run.evidence);
                config.n_samples = run.samples;
                config.burn_in = run.burn_in;
                config.master_seed = rep_seed;
                config.parallelism = run.parallelism;
                config.analytic_moments = run.analytic_moments;
                let start = Instant::now();
                let outputs = run_cluster(&data, &plan, model, &config)?;
                let est = combine_outputs(model, &outputs, run.mode)?;
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                estimates.entry((model.model_id.clone(), s)).or_default().push(est.log_value);
                rows.push(ReportRow {
                    scenario: run.scenario.name().to_string(),
                    model_id: model.model_id.clone(),
                    splits: s,
                    repetition: rep,
                    log_evidence: est.log_value,
                    method: est.method.as_str().to_string(),
                    wall_time_ms: run.timings.then_some(elapsed),
                });
            }
        }
    }

    let mut references = BTreeMap::new();
    for model in &models {
        if let Some(exact) = exact_reference(model, &data)? {
            references.insert(model.model_id.clone(), (exact, "exact"));
        } else if let Some(single) = estimates.get(&(model.model_id.clone(), 1)) {
            let mean = single.iter().sum::<f64>() / single.len() as f64;
            references.insert(model.model_id.clone(), (mean, "mean_at_S1"));
        }
    }
    let mut metrics = Vec::new();
    for ((id, s), est) in &estimates {
        if let Some((reference, _)) = references.get(id) {
            metrics.push((id.clone(), error_table_metrics(est, *reference, *s)?));
        }
    }

    std::fs::create_dir_all(&run.out)?;
    write_report_csv(&run.out.join("report.csv"), &rows)?;
    write_metrics_csv(&run.out.join("metrics.csv"), &metrics)?;
    Ok(DiagnoseSummary {
        rows,
        metrics,
        references,
    })
}

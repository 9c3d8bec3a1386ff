//! `report.csv` and the human-readable run summary.

use std::fmt::Write as _;
use std::path::Path;

use dmev::cluster::{stream_file_name, Mode, WorkerResult};
use dmev::sharding::ShardPlan;
use dmev::{Error, Result};
use serde::Serialize;

use crate::pipeline::{model_dir, EvidenceFile, EVIDENCE_FILE, PLAN_FILE};

pub const REPORT_FILE: &str = "report.csv";

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReportRow {
    /// `model`, `bayes_factor` or `shard`.
    pub kind: &'static str,
    pub model_id: String,
    pub other_model: Option<String>,
    pub shard: Option<usize>,
    pub n_obs: Option<usize>,
    pub log_evidence: Option<f64>,
    pub mc_std_err: Option<f64>,
    pub log_bf: Option<f64>,
    pub posterior_prob: Option<f64>,
    pub acceptance_rate: Option<f64>,
    pub ess: Option<f64>,
    pub payload_bytes: Option<u64>,
    pub method: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    /// Set when the directory holds an incomplete run.
    pub partial: bool,
    pub warnings: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub summary: String,
}

struct ModelShards {
    model_id: String,
    results: Vec<WorkerResult>,
    payload: Vec<u64>,
}

fn file_len(path: &Path) -> u64 {
    std::fs::metadata(path).map(|m| m.len()).unwrap_or(0)
}

fn read_shards(dir: &Path, model_id: &str) -> Result<ModelShards> {
    let mdir = model_dir(dir, model_id);
    let mut results = Vec::new();
    let mut payload = Vec::new();
    for s in 0.. {
        let path = mdir.join(WorkerResult::file_name(s));
        if !path.is_file() {
            break;
        }
        let r = WorkerResult::read_file(&path)?;
        let mut bytes = file_len(&path);
        if r.conditional_stream_path.is_some() {
            bytes += file_len(&mdir.join(stream_file_name(s)));
        }
        results.push(r);
        payload.push(bytes);
    }
    Ok(ModelShards {
        model_id: model_id.to_string(),
        results,
        payload,
    })
}

/// Model ids found on disk when there is no evidence file.
fn discover_models(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    let root_first = dir.join(WorkerResult::file_name(0));
    if root_first.is_file() {
        ids.push(WorkerResult::read_file(&root_first)?.model_id);
    }
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() && p.join(WorkerResult::file_name(0)).is_file() {
            if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
                ids.push(name.to_string());
            }
        }
    }
    Ok(ids)
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Tabulates a run directory into `report.csv` and returns the summary. An
/// incomplete run still produces a report, flagged as partial.
pub fn emit_report(dir: &Path) -> Result<Report> {
    if !dir.is_dir() {
        return Err(Error::Input(format!("{} is not a directory", dir.display())));
    }
    let mut warnings = Vec::new();
    let evidence_path = dir.join(EVIDENCE_FILE);
    let evidence = if evidence_path.is_file() {
        Some(EvidenceFile::read(&evidence_path)?)
    } else {
        warnings.push(format!("{EVIDENCE_FILE} is missing; the run has not been combined"));
        None
    };
    let plan_path = dir.join(PLAN_FILE);
    let plan = if plan_path.is_file() {
        Some(ShardPlan::read_file(&plan_path)?)
    } else {
        None
    };
    let ids = match &evidence {
        Some(ev) => ev.models.iter().map(|m| m.model_id.clone()).collect(),
        None => discover_models(dir)?,
    };
    let shards = ids.iter().map(|id| read_shards(dir, id)).collect::<Result<Vec<_>>>()?;
    for m in &shards {
        let expected = plan
            .as_ref()
            .map(|p| p.splits)
            .or_else(|| m.results.first().map(|r| r.n_splits))
            .or(evidence.as_ref().map(|e| e.splits));
        if let Some(expected) = expected {
            if m.results.len() < expected {
                warnings.push(format!(
                    "model {}: {} of {expected} worker results present",
                    m.model_id,
                    m.results.len()
                ));
            }
        }
    }
    if ids.is_empty() {
        warnings.push("no models found".into());
    }

    let mut rows = Vec::new();
    let mut summary = String::new();
    if let Some(ev) = &evidence {
        let mode = match ev.mode {
            Mode::Approx => "approx",
            Mode::Conditional => "conditional",
        };
        let _ = writeln!(summary, "S = {}, mode {mode}", ev.splits);
        let _ = writeln!(summary, "{:<16} {:>18} {:>10} {:>10}", "model", "log evidence", "std err", "P(m|y)");
        let cmp = &ev.comparison;
        for (i, m) in ev.models.iter().enumerate() {
            let _ = writeln!(
                summary,
                "{:<16} {:>18.6} {:>10} {:>10.4}",
                m.model_id,
                m.estimate.log_value,
                fmt_opt(m.estimate.mc_std_err, 4),
                cmp.posterior_probs[i]
            );
            rows.push(ReportRow {
                kind: "model",
                model_id: m.model_id.clone(),
                log_evidence: Some(m.estimate.log_value),
                mc_std_err: m.estimate.mc_std_err,
                posterior_prob: Some(cmp.posterior_probs[i]),
                method: Some(m.estimate.method.as_str().to_string()),
                ..ReportRow::default()
            });
        }
        if cmp.model_ids.len() > 1 {
            let _ = writeln!(summary, "log Bayes factors (row over column):");
            let _ = write!(summary, "{:<16}", "");
            for id in &cmp.model_ids {
                let _ = write!(summary, " {id:>12}");
            }
            summary.push('\n');
            for (i, id) in cmp.model_ids.iter().enumerate() {
                let _ = write!(summary, "{id:<16}");
                for j in 0..cmp.model_ids.len() {
                    let _ = write!(summary, " {:>12.4}", cmp.log_bf[i][j]);
                    if i != j {
                        rows.push(ReportRow {
                            kind: "bayes_factor",
                            model_id: id.clone(),
                            other_model: Some(cmp.model_ids[j].clone()),
                            log_bf: Some(cmp.log_bf[i][j]),
                            ..ReportRow::default()
                        });
                    }
                }
                summary.push('\n');
            }
        }
    }
    for m in &shards {
        let total: u64 = m.payload.iter().sum();
        let _ = writeln!(
            summary,
            "model {}: {} shard(s), {total} payload bytes",
            m.model_id,
            m.results.len()
        );
        let _ = writeln!(
            summary,
            "  {:>5} {:>8} {:>18} {:>10} {:>10} {:>12}",
            "shard", "n_obs", "local log ev", "accept", "ess", "bytes"
        );
        for (r, &bytes) in m.results.iter().zip(&m.payload) {
            let _ = writeln!(
                summary,
                "  {:>5} {:>8} {:>18.6} {:>10} {:>10} {:>12}",
                r.shard_id,
                r.n_obs,
                r.log_local_evidence.value,
                fmt_opt(r.acceptance_rate, 3),
                fmt_opt(r.ess, 1),
                bytes
            );
            rows.push(ReportRow {
                kind: "shard",
                model_id: m.model_id.clone(),
                shard: Some(r.shard_id),
                n_obs: Some(r.n_obs),
                log_evidence: Some(r.log_local_evidence.value),
                mc_std_err: r.log_local_evidence.std_err,
                acceptance_rate: r.acceptance_rate,
                ess: r.ess,
                payload_bytes: Some(bytes),
                method: Some(r.log_local_evidence.method.as_str().to_string()),
                ..ReportRow::default()
            });
        }
    }
    let _ = writeln!(
        summary,
        "payload per worker: O(p^2) in approx mode, O(N p^2) in conditional mode (conditional streams)"
    );
    for w in &warnings {
        let _ = writeln!(summary, "warning: {w}");
    }

    let mut w = csv::Writer::from_path(dir.join(REPORT_FILE))?;
    for r in &rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "kind",
            "model_id",
            "other_model",
            "shard",
            "n_obs",
            "log_evidence",
            "mc_std_err",
            "log_bf",
            "posterior_prob",
            "acceptance_rate",
            "ess",
            "payload_bytes",
            "method",
        ])?;
    }
    w.flush()?;
    Ok(Report {
        partial: !warnings.is_empty(),
        warnings,
        rows,
        summary,
    })
}

//! Run configuration: a JSON file mirroring [`RunConfig`], with command-line
//! flags taking precedence.

use std::path::{Path, PathBuf};

use dmev::cluster::{LocalMethod, Mode};
use dmev::evidence::{DEFAULT_IMPORTANCE_SAMPLES, DEFAULT_INFLATION};
use dmev::sharding::{Strategy, DEFAULT_KMEANS_K};
use dmev::{Error, ModelSpec, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub models: Vec<PathBuf>,
    #[serde(rename = "S")]
    pub splits: usize,
    pub strategy: Strategy,
    pub kmeans_k: usize,
    pub mode: Mode,
    pub evidence: LocalMethod,
    /// Iterations per chain, burn-in included.
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Worker threads; 0 picks the number of available cores.
    pub parallelism: usize,
    pub out: PathBuf,
    pub importance_draws: usize,
    pub inflation: f64,
    /// Closed-form subposterior moments for conjugate linear models.
    pub analytic_moments: bool,
    /// Also write `timings.json` (not reproducible byte for byte).
    pub timings: bool,
    /// Per-worker access log on standard error.
    pub verbose: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            models: Vec::new(),
            splits: 1,
            strategy: Strategy::Uniform,
            kmeans_k: DEFAULT_KMEANS_K,
            mode: Mode::Approx,
            evidence: LocalMethod::Importance,
            samples: 10_000,
            burn_in: 2_000,
            seed: 0,
            parallelism: 0,
            out: PathBuf::from("out"),
            importance_draws: DEFAULT_IMPORTANCE_SAMPLES,
            inflation: DEFAULT_INFLATION,
            analytic_moments: false,
            timings: false,
            verbose: false,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.data.is_file() {
            return Err(Error::Input(format!("data file {} does not exist", self.data.display())));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one model file is required".into()));
        }
        for m in &self.models {
            if !m.is_file() {
                return Err(Error::Input(format!("model file {} does not exist", m.display())));
            }
        }
        if self.splits == 0 {
            return Err(Error::Config("S must be at least 1".into()));
        }
        if !self.analytic_moments && self.samples <= self.burn_in {
            return Err(Error::Config(format!(
                "samples ({}) must exceed burn-in ({})",
                self.samples, self.burn_in
            )));
        }
        Ok(())
    }

    pub fn threads(&self) -> usize {
        if self.parallelism == 0 {
            dmev::exec::default_parallelism()
        } else {
            self.parallelism
        }
    }
}

/// Reads one model or an array of models from each file, keeping order.
pub fn load_models(paths: &[PathBuf]) -> Result<Vec<ModelSpec>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Box<ModelSpec>),
        Many(Vec<ModelSpec>),
    }
    let mut models = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read model {}: {e}", path.display())))?;
        let parsed: OneOrMany =
            serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        match parsed {
            OneOrMany::One(m) => models.push(*m),
            OneOrMany::Many(ms) => models.extend(ms),
        }
    }
    for (i, m) in models.iter().enumerate() {
        m.validate()?;
        check_model_id(&m.model_id)?;
        if models[..i].iter().any(|o| o.model_id == m.model_id) {
            return Err(Error::Config(format!("duplicate model id `{}`", m.model_id)));
        }
    }
    Ok(models)
}

/// Model ids name output directories.
pub fn check_model_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "model id `{id}` must be non-empty and use only letters, digits, `-`, `_` or `.`"
        )))
    }
}

pub fn write_model(path: &Path, model: &ModelSpec) -> Result<()> {
    let mut text = serde_json::to_string_pretty(model)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_fields_and_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"S": 4, "mode": "conditional", "evidence": "chib"}"#).unwrap();
        assert_eq!(cfg.splits, 4);
        assert_eq!(cfg.mode, Mode::Conditional);
        assert_eq!(cfg.evidence, LocalMethod::Chib);
        assert_eq!(cfg.samples, 10_000);
        assert!(serde_json::from_str::<RunConfig>(r#"{"splits": 4}"#).is_err());
    }

    #[test]
    fn validation_errors() {
        let mut cfg = RunConfig {
            data: PathBuf::from("/nonexistent/data.csv"),
            ..RunConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().code(), "E_INPUT");
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.csv");
        std::fs::write(&data, "y,x1\n1,0\n").unwrap();
        cfg.data = data.clone();
        cfg.models = vec![data];
        cfg.burn_in = cfg.samples;
        assert_eq!(cfg.validate().unwrap_err().code(), "E_CONFIG");
    }

    #[test]
    fn model_ids() {
        assert!(check_model_id("m1.full-a_b").is_ok());
        assert!(check_model_id("../x").is_err());
        assert!(check_model_id("").is_err());
    }
}

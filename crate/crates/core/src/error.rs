use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{context}: matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { context: String, min_eigenvalue: f64 },

    #[error("sampler initialisation failed: {0}")]
    Initialization(String),

    #[error("estimator failure: {0}")]
    Estimator(String),

    #[error("combination error: {0}")]
    Combination(String),

    #[error("model {model} was not explored enough on shard {shard} ({visits} visits, need {required})")]
    UnexploredModel {
        model: String,
        shard: usize,
        visits: u64,
        required: u64,
    },

    #[error("quadrature did not converge: achieved relative change {achieved:e}, target {target:e}")]
    Quadrature { achieved: f64, target: f64 },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("invalid payload: {0}")]
    Validation(String),

    #[error("shard {shard}: {source}")]
    Shard {
        shard: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{} worker(s) failed: {}", .0.len(), join_errors(.0))]
    Workers(Vec<Error>),

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_errors(errs: &[Error]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub fn in_shard(self, shard: usize) -> Self {
        match self {
            e @ Error::Shard { .. } => e,
            e => Error::Shard {
                shard,
                source: Box::new(e),
            },
        }
    }

    /// Stable code used by the command-line surface.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Input(_) | Error::Io(_) | Error::Csv(_) => "E_INPUT",
            Error::Config(_) | Error::Dimension(_) | Error::Domain(_) => "E_CONFIG",
            Error::NotPositiveDefinite { .. } | Error::Quadrature { .. } => "E_NUMERIC",
            Error::Initialization(_) | Error::Estimator(_) => "E_SAMPLER",
            Error::SchemaVersion { .. } | Error::Validation(_) | Error::Json(_) => "E_PROTOCOL",
            Error::Combination(_) | Error::UnexploredModel { .. } => "E_COMBINE",
            Error::Shard { source, .. } => source.code(),
            Error::Workers(errs) => errs.first().map_or("E_SAMPLER", Error::code),
        }
    }
}

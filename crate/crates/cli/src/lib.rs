//! Library side of the `dmev` command: configuration, the end-to-end run,
//! reports, and the reversible-jump and diagnostic drivers.

pub mod config;
pub mod diagnose;
pub mod pipeline;
pub mod report;
pub mod rj;

pub use config::RunConfig;
pub use pipeline::{run_pipeline, RunSummary};
pub use report::{emit_report, Report};

/// Structured error line written to standard error on failure.
pub fn error_json(e: &dmev::Error) -> String {
    serde_json::json!({
        "error": {
            "code": e.code(),
            "message": e.to_string(),
        }
    })
    .to_string()
}

//! Orchestration: manifests, pair building, evaluation runs and reports.

pub mod config;
pub mod manifest;
pub mod report;
pub mod run;

use thiserror::Error;

pub use config::RunConfig;
pub use manifest::{build_pairs, CameraRef, FaceRef, MatchSource, PairManifest, PairSpec, VisibilityRule};
pub use report::{emit_report, summary_csv, Format};
pub use run::{evaluate_pair, run_evaluation, RunReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad input detected before any work was done.
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(vec![msg.into()])
    }

    /// Process exit code: 1 for validation errors, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

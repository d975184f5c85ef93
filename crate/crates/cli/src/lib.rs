//! Experiment orchestration for the `photosid` tool: configuration, the
//! identify / schedule / validate stages and figure bundles.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod figures;
pub mod manifest;
pub mod pipeline;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{failed} of {total} {what} failed")]
    Partial { what: &'static str, failed: usize, total: usize },
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingArtifact(_) => 2,
            PipelineError::Numeric(_) | PipelineError::Io(_) => 3,
            PipelineError::Partial { .. } => 4,
        }
    }

    pub(crate) fn numeric(e: impl std::fmt::Display) -> Self {
        PipelineError::Numeric(e.to_string())
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Failures of a run, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid configuration; the message carries `file:line`.
    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("numeric failure in stage {stage}: {detail}")]
    Numeric { stage: String, detail: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingArtifact(_) => 2,
            CliError::Numeric { .. } => 3,
        }
    }

    pub fn numeric(stage: &str, detail: impl ToString) -> Self {
        CliError::Numeric {
            stage: stage.to_string(),
            detail: detail.to_string(),
        }
    }
}

/// Tags a core error with the stage that raised it. Core numeric errors keep
/// their own stage name.
pub fn in_stage(stage: &'static str) -> impl Fn(superfractal::Error) -> CliError {
    move |e| match e {
        superfractal::Error::Numeric {
            stage: inner,
            detail,
        } => CliError::Numeric {
            stage: format!("{stage}/{inner}"),
            detail,
        },
        other => CliError::numeric(stage, other),
    }
}

pub type CliResult<T> = Result<T, CliError>;

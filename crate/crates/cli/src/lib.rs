//! Experiment runner: config parsing, orchestration and CSV artifacts.

pub mod config;
pub mod output;
pub mod run;

use thiserror::Error;

pub use config::{parse_config, Command, Config};
pub use run::{run, RunManifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("PARSE_ERROR at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("VALIDATION_ERROR({field}): {msg}")]
    Validation { field: String, msg: String },
    #[error("{stage} failed with {}: {source}", source.code())]
    Stage {
        stage: &'static str,
        #[source]
        source: homoglab::Error,
    },
    #[error("certification failed: {0}")]
    Certification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation { .. } => 2,
            CliError::Stage { source, .. } if source.is_precondition() => 3,
            CliError::Stage { source, .. } if source.is_solver_failure() => 4,
            CliError::Stage { source: homoglab::Error::Io(_), .. } | CliError::Io(_) => 1,
            CliError::Stage { .. } => 2,
            CliError::Certification(_) => 4,
        }
    }
}

/// Attaches the stage name to a core error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for homoglab::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

//! Command-line pipeline: `synth`, `prepare`, `train`, `eval`, `explain`
//! and `plot`, all driven by one [`config::RunConfig`].

pub mod commands;
pub mod config;
pub mod plot;

use std::path::PathBuf;

pub use commands::{dispatch, localization_hit, Command};
pub use config::{load_config, ConfigError, RunConfig, OUTPUT_DIR_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("missing {what} {} (run `{producer}` first)", path.display())]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        producer: &'static str,
    },

    #[error(transparent)]
    Core(#[from] nearmiss_core::Error),
}

impl CliError {
    /// Short stable tag for the error class.
    pub fn kind(&self) -> &'static str {
        use nearmiss_core::Error as E;
        match self {
            CliError::Config(ConfigError::UnknownKeys(_)) => "unknown_key",
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Core(e) => match e {
                E::Config(_) => "config",
                E::Invalid(_) => "invalid",
                E::Shape(_) => "shape",
                E::NonFinite { .. } | E::NonFiniteLoss { .. } => "non_finite",
                E::NotFound(_) => "not_found",
                E::Io { .. } => "io",
                E::Format { .. } => "format",
                E::Image(_) => "image",
                E::Json(_) => "json",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Core(_) => 1,
        }
    }

    /// `error[<kind>]: <message>` on a single line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.kind())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

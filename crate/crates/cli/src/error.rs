use std::process::ExitCode;

use anagram_core::denoiser::BackendError;
use anagram_core::guidance::DiffusionError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    VerificationFailed(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("sampling diverged: {0}")]
    Divergence(String),
    #[error("refusing known-broken view(s): {0}; pass --allow-broken to run anyway")]
    BrokenRefused(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::VerificationFailed(_) => 1,
            Self::Config(_) => 2,
            Self::Backend(_) => 3,
            Self::Divergence(_) => 4,
            Self::BrokenRefused(_) => 5,
        }
    }

    pub fn config(e: impl std::fmt::Display) -> Self {
        Self::Config(e.to_string())
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::Config(format!("{}: {e}", path.display()))
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::UnknownCondition(_) | BackendError::InvalidInput(_) => Self::Config(e.to_string()),
            _ => Self::Backend(e.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::Divergence { .. } => Self::Divergence(e.to_string()),
            DiffusionError::Backend { source: BackendError::UnknownCondition(_), .. } => Self::Config(e.to_string()),
            DiffusionError::Backend { .. } => Self::Backend(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<CliError> for ExitCode {
    fn from(e: CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}

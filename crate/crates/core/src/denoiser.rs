//! The abstract noise-prediction backend.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Dims, ImageTensor};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unknown condition `{0}`")]
    UnknownCondition(String),
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
    #[error("backend returned shape {actual}, expected {expected}")]
    ShapeMismatch { expected: Dims, actual: Dims },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server error {status}: {body}")]
    Server { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Noise estimate with an optional per-element log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub eps: ImageTensor,
    pub log_var: Option<ImageTensor>,
}

impl DenoiserOutput {
    pub fn new(eps: ImageTensor) -> Self {
        Self { eps, log_var: None }
    }

    pub fn with_log_var(eps: ImageTensor, log_var: ImageTensor) -> Self {
        Self { eps, log_var: Some(log_var) }
    }

    pub(crate) fn check_dims(&self, expected: Dims) -> Result<(), BackendError> {
        for t in std::iter::once(&self.eps).chain(self.log_var.as_ref()) {
            if t.dims() != expected {
                return Err(BackendError::ShapeMismatch { expected, actual: t.dims() });
            }
        }
        Ok(())
    }
}

/// Where classifier-free guidance was combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfgMode {
    Engine,
    Server,
}

/// A positive prompt plus an optional negative prompt that replaces the
/// null condition in guidance. For the analytic backend the label names a
/// condition set; for remote backends it is the prompt text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCondition {
    pub label: String,
    pub negative: Option<String>,
}

impl PromptCondition {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), negative: None }
    }

    pub fn with_negative(label: impl Into<String>, negative: impl Into<String>) -> Result<Self, BackendError> {
        let (label, negative) = (label.into(), negative.into());
        if label == negative {
            return Err(BackendError::InvalidInput(format!("negative prompt equals the positive prompt `{label}`")));
        }
        Ok(Self { label, negative: Some(negative) })
    }
}

pub trait Denoiser: Sync {
    /// Identifier recorded in run metadata.
    fn id(&self) -> String;

    /// ε-estimate for `x_t` at timestep `t` under `condition` (`None` is the
    /// null condition).
    fn denoise(&self, x_t: &ImageTensor, t: usize, condition: Option<&str>) -> Result<DenoiserOutput, BackendError>;

    /// Estimates under `condition` and `uncondition` at once. Backends that
    /// can batch both should override this.
    fn denoise_pair(
        &self,
        x_t: &ImageTensor,
        t: usize,
        condition: &str,
        uncondition: Option<&str>,
    ) -> Result<(DenoiserOutput, DenoiserOutput), BackendError> {
        Ok((self.denoise(x_t, t, Some(condition))?, self.denoise(x_t, t, uncondition)?))
    }

    /// A guided estimate computed by the backend itself, for backends
    /// configured to do so. `None` means guidance is combined by the engine.
    fn server_guided(
        &self,
        _x_t: &ImageTensor,
        _t: usize,
        _prompt: &PromptCondition,
        _guidance: f64,
    ) -> Option<Result<DenoiserOutput, BackendError>> {
        None
    }

    fn cfg_mode(&self) -> CfgMode {
        CfgMode::Engine
    }
}

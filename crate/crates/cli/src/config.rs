//! Task configuration files (TOML, at most one level of tables).
//!
//! ```toml
//! dims = "1x8x8"
//! views = ["identity", "flip:v"]
//! prompts = ["cat", "dog"]
//! guidance = 3.0
//! backend = "analytic"
//! mixture = "mixture.toml"
//! ```
//!
//! A `[manifest]` table, as written next to generated outputs, is ignored
//! on load, so a manifest is itself a valid config.

use std::path::{Path, PathBuf};

use anagram_core::denoiser::CfgMode;
use anagram_core::guidance::{Reduction, SamplerKind};
use anagram_core::remote::{RemoteConfig, DEFAULT_MAX_IN_FLIGHT};
use anagram_core::tensor::Dims;
use anagram_core::view::DEFAULT_DENSE_CAP;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const BACKEND_URL_ENV: &str = "ANAGRAM_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSection {
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_cfg")]
    pub cfg: CfgMode,
}

impl Default for RemoteSection {
    fn default() -> Self {
        Self { timeout_secs: default_timeout(), retries: default_retries(), max_in_flight: default_in_flight(), cfg: default_cfg() }
    }
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    2
}
fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}
fn default_cfg() -> CfgMode {
    CfgMode::Engine
}
fn default_guidance() -> f64 {
    1.0
}
fn default_steps() -> usize {
    50
}
fn default_backend() -> String {
    "analytic".into()
}
fn default_timesteps() -> usize {
    1000
}
fn default_dense_cap() -> usize {
    DEFAULT_DENSE_CAP
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    /// `CxHxW`.
    pub dims: String,
    pub views: Vec<String>,
    /// One prompt per view. Ignored when `pairs` is set.
    #[serde(default)]
    pub prompts: Vec<String>,
    /// Optional negative prompt per view; `""` means none.
    #[serde(default)]
    pub negative_prompts: Vec<String>,
    /// Prompt-pair file from the `dataset` command; one run per pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    #[serde(default = "default_guidance")]
    pub guidance: f64,
    #[serde(default = "default_reduction")]
    pub reduction: Reduction,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// When non-empty, one run per seed instead of `seed`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// `analytic`, `remote` (URL from the environment) or `remote:<url>`.
    #[serde(default = "default_backend")]
    pub backend: String,
    /// Mixture file for the analytic backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<PathBuf>,
    #[serde(default = "default_timesteps")]
    pub timesteps: usize,
    #[serde(default)]
    pub allow_broken: bool,
    #[serde(default = "default_dense_cap")]
    pub dense_cap: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Directory relative paths resolve against; defaults to the config's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_dir: Option<PathBuf>,
    #[serde(default)]
    pub remote: RemoteSection,
    #[serde(default, skip_serializing)]
    pub manifest: Option<toml::Table>,
}

fn default_reduction() -> Reduction {
    Reduction::Mean
}
fn default_sampler() -> SamplerKind {
    SamplerKind::Ddpm
}

/// Which denoiser or embedder to use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Analytic,
    Remote(String),
}

impl BackendChoice {
    /// Parses `analytic`, `remote` or `remote:<url>`; a bare `remote` takes
    /// its URL from `ANAGRAM_BACKEND_URL`.
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.split_once(':') {
            _ if s == "analytic" => Ok(Self::Analytic),
            _ if s == "remote" => std::env::var(BACKEND_URL_ENV)
                .map(Self::Remote)
                .map_err(|_| CliError::Config(format!("backend `remote` needs a URL: use remote:<url> or set {BACKEND_URL_ENV}"))),
            Some(("remote", url)) if !url.is_empty() => Ok(Self::Remote(url.to_string())),
            _ => Err(CliError::Config(format!("unknown backend `{s}` (expected analytic, remote or remote:<url>)"))),
        }
    }
}

impl GenerateConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.manifest = None;
        if cfg.base_dir.is_none() {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            cfg.base_dir = Some(dir.canonicalize().map_err(|e| CliError::io(dir, e))?);
        }
        Ok(cfg)
    }

    pub fn base_dir(&self) -> PathBuf {
        self.base_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }

    pub fn parsed_dims(&self) -> Result<Dims, CliError> {
        Dims::parse(&self.dims).ok_or_else(|| CliError::Config(format!("invalid dims `{}` (expected CxHxW)", self.dims)))
    }

    pub fn backend_choice(&self) -> Result<BackendChoice, CliError> {
        BackendChoice::parse(&self.backend)
    }

    pub fn remote_config(&self, url: &str) -> RemoteConfig {
        RemoteConfig {
            base_url: url.to_string(),
            timeout_secs: self.remote.timeout_secs,
            retries: self.remote.retries,
            max_in_flight: self.remote.max_in_flight,
            cfg_mode: self.remote.cfg,
        }
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.parsed_dims()?;
        if self.views.is_empty() {
            return Err(CliError::Config("at least one view is required".into()));
        }
        if self.pairs.is_none() && self.prompts.len() != self.views.len() {
            return Err(CliError::Config(format!("{} views but {} prompts", self.views.len(), self.prompts.len())));
        }
        if !self.negative_prompts.is_empty() && self.negative_prompts.len() != self.views.len() {
            return Err(CliError::Config(format!(
                "{} views but {} negative prompts",
                self.views.len(),
                self.negative_prompts.len()
            )));
        }
        if !(self.guidance.is_finite() && self.guidance >= 1.0) {
            return Err(CliError::Config(format!("guidance must be >= 1, got {}", self.guidance)));
        }
        if self.timesteps == 0 {
            return Err(CliError::Config("timesteps must be positive".into()));
        }
        self.backend_choice()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "dims = \"1x4x4\"\nviews = [\"identity\", \"flip:v\"]\nprompts = [\"a\", \"b\"]\n";

    #[test]
    fn defaults_and_round_trip() {
        let cfg: GenerateConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!((cfg.guidance, cfg.steps, cfg.reduction, cfg.sampler), (1.0, 50, Reduction::Mean, SamplerKind::Ddpm));
        assert_eq!(cfg.remote, RemoteSection::default());
        cfg.validate().unwrap();
        let back: GenerateConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn manifest_table_is_ignored_and_unknown_keys_rejected() {
        let with_manifest = format!("{MINIMAL}\n[manifest]\nwall_clock_secs = 1.5\n");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.toml");
        std::fs::write(&p, with_manifest).unwrap();
        let cfg = GenerateConfig::load(&p).unwrap();
        assert!(cfg.manifest.is_none());
        assert_eq!(cfg.base_dir.unwrap(), dir.path().canonicalize().unwrap());
        assert!(toml::from_str::<GenerateConfig>(&format!("{MINIMAL}colour = 1\n")).is_err());
    }

    #[test]
    fn validation() {
        let mut cfg: GenerateConfig = toml::from_str(MINIMAL).unwrap();
        cfg.prompts.pop();
        assert!(cfg.validate().is_err());
        let mut cfg: GenerateConfig = toml::from_str(MINIMAL).unwrap();
        cfg.guidance = 0.5;
        assert!(cfg.validate().is_err());
        cfg.guidance = 2.0;
        cfg.dims = "4x4".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn backend_parsing() {
        assert_eq!(BackendChoice::parse("analytic").unwrap(), BackendChoice::Analytic);
        assert_eq!(BackendChoice::parse("remote:http://h:1").unwrap(), BackendChoice::Remote("http://h:1".into()));
        assert!(BackendChoice::parse("gpu").is_err());
        assert!(BackendChoice::parse("remote:").is_err());
    }
}

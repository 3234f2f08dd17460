use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TIMESTEPS: usize = 1000;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule needs alpha_bar[0] = 1 and at least one step")]
    BadStart,
    #[error("alpha_bar must lie in (0, 1] and strictly decrease; violated at t = {0}")]
    NotDecreasing(usize),
    #[error("{steps} sampling steps exceed the {max} schedule timesteps")]
    TooManySteps { steps: usize, max: usize },
}

/// Variance-preserving noise schedule: `x_t = √ᾱ_t x_0 + √(1-ᾱ_t) ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    name: String,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule with `T` steps. Per-step betas are clipped at 0.999
    /// and `ᾱ` is rebuilt as their cumulative product.
    pub fn cosine(timesteps: usize) -> Self {
        let t_max = timesteps.max(1) as f64;
        let f = |t: f64| ((t / t_max + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let f0 = f(0.0);
        let mut alpha_bar = Vec::with_capacity(timesteps + 1);
        alpha_bar.push(1.0);
        let mut prev_raw = 1.0;
        for t in 1..=timesteps.max(1) {
            let raw = f(t as f64) / f0;
            let beta = (1.0 - raw / prev_raw).min(MAX_BETA);
            prev_raw = raw;
            let last = *alpha_bar.last().unwrap();
            alpha_bar.push(last * (1.0 - beta));
        }
        Self { name: format!("cosine(T={})", timesteps.max(1)), alpha_bar }
    }

    pub fn from_alpha_bar(name: impl Into<String>, alpha_bar: Vec<f64>) -> Result<Self, ScheduleError> {
        if alpha_bar.len() < 2 || alpha_bar[0] != 1.0 {
            return Err(ScheduleError::BadStart);
        }
        for t in 1..alpha_bar.len() {
            let a = alpha_bar[t];
            if !(a > 0.0 && a < alpha_bar[t - 1]) {
                return Err(ScheduleError::NotDecreasing(t));
            }
        }
        Ok(Self { name: name.into(), alpha_bar })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of timesteps `T`.
    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn w_signal(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    pub fn w_noise(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// Subsampled timesteps `τ_k = round(k·T/S)` for `k = 0..=S`, ascending.
    pub fn timesteps(&self, steps: usize) -> Result<Vec<usize>, ScheduleError> {
        let t = self.t_max();
        if steps > t {
            return Err(ScheduleError::TooManySteps { steps, max: t });
        }
        if steps == 0 {
            return Ok(vec![t]);
        }
        Ok((0..=steps).map(|k| ((k * t) as f64 / steps as f64).round() as usize).collect())
    }

    /// SHA-256 over the little-endian bytes of `ᾱ`, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for a in &self.alpha_bar {
            h.update(a.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::cosine(DEFAULT_TIMESTEPS)
    }
}

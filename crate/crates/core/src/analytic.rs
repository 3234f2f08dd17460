//! Closed-form optimal denoiser for isotropic Gaussian mixtures.
//!
//! With `a = √ᾱ_t`, `b = √(1-ᾱ_t)`, the noisy marginal of the (conditioned)
//! mixture is `p_t(x) = Σ_k w_k N(x; a μ_k, s_k I)` with `s_k = a² σ_k² + b²`,
//! and the posterior-optimal noise prediction is `ε̂ = -b ∇log p_t(x)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::denoiser::{BackendError, Denoiser, DenoiserOutput};
use crate::format::{decode_image, read_file, FormatError};
use crate::schedule::NoiseSchedule;
use crate::tensor::{Dims, ImageTensor};
use crate::view::{View, ViewError};

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("mixture needs at least one component")]
    Empty,
    #[error("component {0}: weight must be positive and finite")]
    Weight(usize),
    #[error("weights sum to {0}, expected 1 within 1e-9")]
    WeightSum(f64),
    #[error("component {0}: sigma must be positive and finite")]
    Sigma(usize),
    #[error("component {index}: mean has dims {actual}, expected {expected}")]
    Dims { index: usize, expected: Dims, actual: Dims },
    #[error("condition `{0}` is empty")]
    EmptyCondition(String),
    #[error("condition `{name}` references component {index}, but there are only {count}")]
    BadIndex { name: String, index: usize, count: usize },
    #[error("mixture file: {0}")]
    File(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    View(#[from] ViewError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: ImageTensor,
    /// Standard deviation; the component covariance is `sigma² I`.
    pub sigma: f64,
}

/// Gaussian mixture with named condition sets ("prompts"). The null
/// condition is the full mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    components: Vec<Component>,
    conditions: BTreeMap<String, Vec<usize>>,
}

impl MixtureSpec {
    pub fn new(components: Vec<Component>, conditions: BTreeMap<String, Vec<usize>>) -> Result<Self, MixtureError> {
        let first = components.first().ok_or(MixtureError::Empty)?;
        let dims = first.mean.dims();
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(MixtureError::Weight(i));
            }
            if !(c.sigma.is_finite() && c.sigma > 0.0) {
                return Err(MixtureError::Sigma(i));
            }
            if c.mean.dims() != dims {
                return Err(MixtureError::Dims { index: i, expected: dims, actual: c.mean.dims() });
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(MixtureError::WeightSum(total));
        }
        for (name, set) in &conditions {
            if set.is_empty() {
                return Err(MixtureError::EmptyCondition(name.clone()));
            }
            if let Some(&index) = set.iter().find(|&&i| i >= components.len()) {
                return Err(MixtureError::BadIndex { name: name.clone(), index, count: components.len() });
            }
        }
        Ok(Self { components, conditions })
    }

    /// Equal-weight mixture with one condition per component.
    pub fn uniform(named: Vec<(&str, ImageTensor, f64)>) -> Result<Self, MixtureError> {
        let w = 1.0 / named.len().max(1) as f64;
        let mut conditions = BTreeMap::new();
        let components = named
            .into_iter()
            .enumerate()
            .map(|(i, (name, mean, sigma))| {
                conditions.insert(name.to_string(), vec![i]);
                Component { weight: w, mean, sigma }
            })
            .collect();
        Self::new(components, conditions)
    }

    pub fn dims(&self) -> Dims {
        self.components[0].mean.dims()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn conditions(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.conditions
    }

    /// Component indices of `condition`; the full mixture for `None`.
    pub fn subset(&self, condition: Option<&str>) -> Result<Vec<usize>, BackendError> {
        match condition {
            None => Ok((0..self.components.len()).collect()),
            Some(name) => self
                .conditions
                .get(name)
                .cloned()
                .ok_or_else(|| BackendError::UnknownCondition(name.to_string())),
        }
    }

    /// The same mixture with every mean replaced by `view(mean)`.
    pub fn transformed(&self, view: &View) -> Result<Self, MixtureError> {
        let components = self
            .components
            .iter()
            .map(|c| Ok(Component { mean: view.apply(&c.mean)?, ..c.clone() }))
            .collect::<Result<_, ViewError>>()?;
        Ok(Self { components, conditions: self.conditions.clone() })
    }

    /// Per-component `(log w̃_k + log N(x; a μ_k, s_k I), s_k, k)` over the subset.
    fn log_terms(&self, subset: &[usize], x: &[f64], a: f64, b: f64) -> Vec<(f64, f64, usize)> {
        let d = x.len() as f64;
        let wsum: f64 = subset.iter().map(|&k| self.components[k].weight).sum();
        subset
            .iter()
            .map(|&k| {
                let c = &self.components[k];
                let s2 = a * a * c.sigma * c.sigma + b * b;
                let dist2: f64 = x.iter().zip(c.mean.data()).map(|(xi, mi)| (xi - a * mi).powi(2)).sum();
                let logn = -0.5 * d * (2.0 * std::f64::consts::PI * s2).ln() - dist2 / (2.0 * s2);
                ((c.weight / wsum).ln() + logn, s2, k)
            })
            .collect()
    }

    /// `log p_t(x)` for the conditioned mixture at signal weight `a`, noise weight `b`.
    pub fn log_density(&self, condition: Option<&str>, x: &ImageTensor, a: f64, b: f64) -> Result<f64, BackendError> {
        let subset = self.subset(condition)?;
        let terms = self.log_terms(&subset, x.data(), a, b);
        Ok(log_sum_exp(terms.iter().map(|t| t.0)))
    }

    /// Responsibilities `r_k(x)` over the conditioned subset, as `(k, r_k)`.
    pub fn responsibilities(&self, condition: Option<&str>, x: &ImageTensor, a: f64, b: f64) -> Result<Vec<(usize, f64)>, BackendError> {
        let subset = self.subset(condition)?;
        let terms = self.log_terms(&subset, x.data(), a, b);
        let lse = log_sum_exp(terms.iter().map(|t| t.0));
        Ok(terms.iter().map(|&(l, _, k)| (k, (l - lse).exp())).collect())
    }

    /// `ε̂ = -b Σ_k r_k (a μ_k - x) / s_k`.
    pub fn eps(&self, condition: Option<&str>, x: &ImageTensor, a: f64, b: f64) -> Result<ImageTensor, BackendError> {
        if x.dims() != self.dims() {
            return Err(BackendError::ShapeMismatch { expected: self.dims(), actual: x.dims() });
        }
        if !x.is_finite() {
            return Err(BackendError::InvalidInput("x_t contains non-finite values".into()));
        }
        let subset = self.subset(condition)?;
        let terms = self.log_terms(&subset, x.data(), a, b);
        let lse = log_sum_exp(terms.iter().map(|t| t.0));
        let mut grad = vec![0.0; x.len()];
        for &(l, s2, k) in &terms {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            let mu = self.components[k].mean.data();
            for ((g, xi), mi) in grad.iter_mut().zip(x.data()).zip(mu) {
                *g += r * (a * mi - xi) / s2;
            }
        }
        Ok(ImageTensor::new(x.dims(), grad.into_iter().map(|g| -b * g).collect()).expect("dims match"))
    }

    /// Reads a TOML mixture file. Means are inline arrays (`mean = [..]`) or
    /// tensor files (`mean_file = "mu.nten"`, relative to the file's directory).
    ///
    /// ```toml
    /// dims = "1x1x2"
    /// [[component]]
    /// weight = 0.5
    /// mean = [0.3, -0.2]
    /// sigma = 0.1
    /// [conditions]
    /// cat = [0]
    /// ```
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, MixtureError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            dims: String,
            component: Vec<Comp>,
            #[serde(default)]
            conditions: BTreeMap<String, Vec<usize>>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Comp {
            weight: f64,
            sigma: f64,
            mean: Option<Vec<f64>>,
            mean_file: Option<String>,
        }
        let file: File = toml::from_str(text).map_err(|e| MixtureError::File(e.to_string()))?;
        let dims = Dims::parse(&file.dims).ok_or_else(|| MixtureError::File(format!("bad dims `{}`", file.dims)))?;
        let mut components = Vec::with_capacity(file.component.len());
        for (i, c) in file.component.into_iter().enumerate() {
            let mean = match (c.mean, c.mean_file) {
                (Some(v), None) => ImageTensor::new(dims, v).map_err(|e| MixtureError::File(format!("component {i}: {e}")))?,
                (None, Some(p)) => {
                    let path = base_dir.join(p);
                    decode_image(&read_file(&path)?)?
                }
                _ => return Err(MixtureError::File(format!("component {i}: give exactly one of mean, mean_file"))),
            };
            components.push(Component { weight: c.weight, mean, sigma: c.sigma });
        }
        Self::new(components, file.conditions)
    }

    pub fn to_toml(&self) -> String {
        let mut s = format!("dims = \"{}\"\n", self.dims());
        for c in &self.components {
            let mean: Vec<String> = c.mean.data().iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&format!(
                "\n[[component]]\nweight = {:?}\nsigma = {:?}\nmean = [{}]\n",
                c.weight,
                c.sigma,
                mean.join(", ")
            ));
        }
        s.push_str("\n[conditions]\n");
        for (name, set) in &self.conditions {
            let idx: Vec<String> = set.iter().map(usize::to_string).collect();
            s.push_str(&format!("{} = [{}]\n", toml_key(name), idx.join(", ")));
        }
        s
    }
}

fn toml_key(name: &str) -> String {
    if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        name.to_string()
    } else {
        format!("{name:?}")
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// [`Denoiser`] backed by a [`MixtureSpec`] and a schedule.
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    mixture: MixtureSpec,
    schedule: NoiseSchedule,
}

impl AnalyticDenoiser {
    pub fn new(mixture: MixtureSpec, schedule: NoiseSchedule) -> Self {
        Self { mixture, schedule }
    }

    pub fn mixture(&self) -> &MixtureSpec {
        &self.mixture
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn eps_at(&self, condition: Option<&str>, x_t: &ImageTensor, t: usize) -> Result<ImageTensor, BackendError> {
        if t == 0 || t > self.schedule.t_max() {
            return Err(BackendError::InvalidInput(format!("timestep {t} outside 1..={}", self.schedule.t_max())));
        }
        self.mixture.eps(condition, x_t, self.schedule.w_signal(t), self.schedule.w_noise(t))
    }
}

impl Denoiser for AnalyticDenoiser {
    fn id(&self) -> String {
        format!("analytic({} components)", self.mixture.components.len())
    }

    fn denoise(&self, x_t: &ImageTensor, t: usize, condition: Option<&str>) -> Result<DenoiserOutput, BackendError> {
        Ok(DenoiserOutput::new(self.eps_at(condition, x_t, t)?))
    }
}

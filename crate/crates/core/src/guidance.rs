//! Classifier-free guidance and the multi-view combination of noise estimates.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::{BackendError, Denoiser, DenoiserOutput, PromptCondition};
use crate::schedule::ScheduleError;
use crate::tensor::{Dims, ImageTensor};
use crate::view::{View, ViewError};

pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("backend failed at timestep {t}: {source}")]
    Backend {
        t: usize,
        #[source]
        source: BackendError,
    },
    #[error("view {index}: {source}")]
    View {
        index: usize,
        #[source]
        source: ViewError,
    },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("sampler diverged at step {step} (t = {t}): max |x| = {max_abs:e} exceeds {limit:e}", limit = DIVERGENCE_LIMIT)]
    Divergence { step: usize, t: usize, max_abs: f64 },
}

/// How per-view estimates are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(format!(
                        "unknown {} `{other}` (expected {})",
                        stringify!($ty).to_lowercase(),
                        [$($text),+].join(" or ")
                    )),
                }
            }
        }
    };
}

text_enum!(Reduction { Mean => "mean", Alternating => "alternating" });
text_enum!(SamplerKind { Ddpm => "ddpm", Ddim => "ddim" });

/// `N` views, one prompt per view, and the sampling settings.
#[derive(Debug, Clone)]
pub struct MultiViewTask {
    pub views: Vec<View>,
    pub prompts: Vec<PromptCondition>,
    pub guidance: f64,
    pub reduction: Reduction,
    pub sampler: SamplerKind,
    pub steps: usize,
    pub seed: u64,
}

impl MultiViewTask {
    pub fn validate(&self) -> Result<Dims, DiffusionError> {
        let bad = |m: String| Err(DiffusionError::InvalidTask(m));
        if self.views.is_empty() {
            return bad("at least one view is required".into());
        }
        if self.views.len() != self.prompts.len() {
            return bad(format!("{} views but {} prompts", self.views.len(), self.prompts.len()));
        }
        if !(self.guidance.is_finite() && self.guidance >= 1.0) {
            return bad(format!("guidance must be finite and >= 1, got {}", self.guidance));
        }
        let dims = self.views[0].dims();
        if let Some((i, v)) = self.views.iter().enumerate().find(|(_, v)| v.dims() != dims) {
            return bad(format!("view {i} has dims {} but view 0 has {dims}", v.dims()));
        }
        Ok(dims)
    }

    pub fn dims(&self) -> Dims {
        self.views[0].dims()
    }
}

/// `ε_u + γ (ε_c - ε_u)`, where `ε_u` uses the negative prompt when one is
/// set and the null condition otherwise. At `γ = 1` the conditional estimate
/// is returned as is and no unconditional estimate is requested.
pub fn cfg_estimate<D: Denoiser + ?Sized>(
    backend: &D,
    x_t: &ImageTensor,
    t: usize,
    prompt: &PromptCondition,
    guidance: f64,
) -> Result<DenoiserOutput, DiffusionError> {
    let backend_err = |source| DiffusionError::Backend { t, source };
    if !(guidance.is_finite() && guidance >= 1.0) {
        return Err(DiffusionError::InvalidTask(format!("guidance must be finite and >= 1, got {guidance}")));
    }
    if !x_t.is_finite() {
        return Err(backend_err(BackendError::InvalidInput("x_t contains non-finite values".into())));
    }
    let dims = x_t.dims();
    if let Some(out) = backend.server_guided(x_t, t, prompt, guidance) {
        let out = out.map_err(backend_err)?;
        out.check_dims(dims).map_err(backend_err)?;
        return Ok(out);
    }
    if guidance == 1.0 {
        let out = backend.denoise(x_t, t, Some(&prompt.label)).map_err(backend_err)?;
        out.check_dims(dims).map_err(backend_err)?;
        return Ok(out);
    }
    let (cond, uncond) = backend
        .denoise_pair(x_t, t, &prompt.label, prompt.negative.as_deref())
        .map_err(backend_err)?;
    cond.check_dims(dims).map_err(backend_err)?;
    uncond.check_dims(dims).map_err(backend_err)?;
    let eps = uncond
        .eps
        .zip_map(&cond.eps, |u, c| u + guidance * (c - u))
        .expect("dims checked");
    Ok(DenoiserOutput { eps, log_var: cond.log_var })
}

/// One view's guided estimate, mapped back to the original frame.
fn view_estimate<D: Denoiser + ?Sized>(
    backend: &D,
    task: &MultiViewTask,
    index: usize,
    x_t: &ImageTensor,
    t: usize,
) -> Result<DenoiserOutput, DiffusionError> {
    let view = &task.views[index];
    let view_err = |source| DiffusionError::View { index, source };
    let xv = view.apply(x_t).map_err(view_err)?;
    let out = cfg_estimate(backend, &xv, t, &task.prompts[index], task.guidance)?;
    let eps = view.apply_inverse(&out.eps).map_err(view_err)?;
    let log_var = match &out.log_var {
        Some(lv) => Some(view.transport_log_var_inverse(lv).map_err(view_err)?),
        None => None,
    };
    Ok(DenoiserOutput { eps, log_var })
}

/// Mean reduction: `(1/N) Σ_i v_i⁻¹(cfg(v_i(x_t)))`, summed in view order.
/// Alternating reduction: only view `k mod N`, where `k` is the index of the
/// current step in the subsampled sequence. Log-variances, when present, are
/// averaged the same way.
pub fn combined_estimate<D: Denoiser + ?Sized>(
    backend: &D,
    task: &MultiViewTask,
    x_t: &ImageTensor,
    t: usize,
    step: usize,
) -> Result<DenoiserOutput, DiffusionError> {
    let n = task.views.len();
    if n == 0 {
        return Err(DiffusionError::InvalidTask("no views".into()));
    }
    if task.reduction == Reduction::Alternating {
        return view_estimate(backend, task, step % n, x_t, t);
    }
    let outs: Vec<DenoiserOutput> = (0..n)
        .into_par_iter()
        .map(|i| view_estimate(backend, task, i, x_t, t))
        .collect::<Result<_, _>>()?;
    let with_var = outs.iter().filter(|o| o.log_var.is_some()).count();
    if with_var != 0 && with_var != n {
        return Err(DiffusionError::Backend {
            t,
            source: BackendError::Protocol(format!("{with_var} of {n} views returned a log-variance")),
        });
    }
    let dims = x_t.dims();
    let mean = |pick: &dyn Fn(&DenoiserOutput) -> &ImageTensor| {
        let mut acc = vec![0.0; dims.len()];
        for o in &outs {
            for (a, v) in acc.iter_mut().zip(pick(o).data()) {
                *a += v;
            }
        }
        let inv = n as f64;
        ImageTensor::new(dims, acc.into_iter().map(|a| a / inv).collect()).expect("dims match")
    };
    let eps = mean(&|o| &o.eps);
    let log_var = (with_var == n).then(|| mean(&|o| o.log_var.as_ref().unwrap()));
    Ok(DenoiserOutput { eps, log_var })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    /// Returns `x * scale(condition)` so each branch is distinguishable.
    struct Linear;

    impl Denoiser for Linear {
        fn id(&self) -> String {
            "linear".into()
        }

        fn denoise(&self, x: &ImageTensor, _t: usize, c: Option<&str>) -> Result<DenoiserOutput, BackendError> {
            let s = match c {
                None => 1.0,
                Some("a") => 2.0,
                Some("neg") => -1.0,
                Some(other) => return Err(BackendError::UnknownCondition(other.into())),
            };
            Ok(DenoiserOutput::new(x.scale(s)))
        }
    }

    fn x() -> ImageTensor {
        ImageTensor::new(Dims::new(1, 1, 2), vec![0.5, -1.0]).unwrap()
    }

    #[test]
    fn cfg_combination() {
        let p = PromptCondition::new("a");
        let out = cfg_estimate(&Linear, &x(), 5, &p, 3.0).unwrap();
        // 1 + 3 (2 - 1) = 4
        assert_eq!(out.eps.data(), &[2.0, -4.0]);
        let neg = PromptCondition::with_negative("a", "neg").unwrap();
        // -1 + 3 (2 + 1) = 8
        assert_eq!(cfg_estimate(&Linear, &x(), 5, &neg, 3.0).unwrap().eps.data(), &[4.0, -8.0]);
        assert!(cfg_estimate(&Linear, &x(), 5, &p, 0.5).is_err());
    }

    #[test]
    fn backend_errors_carry_timestep() {
        let err = cfg_estimate(&Linear, &x(), 42, &PromptCondition::new("zzz"), 2.0).unwrap_err();
        assert!(err.to_string().contains("timestep 42"), "{err}");
    }

    #[test]
    fn reductions() {
        let d = Dims::new(1, 1, 2);
        let task = MultiViewTask {
            views: vec![View::identity(d), View::negate(d)],
            prompts: vec![PromptCondition::new("a"), PromptCondition::new("a")],
            guidance: 1.0,
            reduction: Reduction::Mean,
            sampler: SamplerKind::Ddim,
            steps: 10,
            seed: 0,
        };
        // linear backends commute with negation, so both branches agree
        let m = combined_estimate(&Linear, &task, &x(), 3, 0).unwrap();
        assert_eq!(m.eps.data(), &[1.0, -2.0]);
        let alt = MultiViewTask { reduction: Reduction::Alternating, ..task };
        assert_eq!(combined_estimate(&Linear, &alt, &x(), 3, 1).unwrap().eps.data(), &[1.0, -2.0]);
    }

    #[test]
    fn enum_text() {
        assert_eq!("alternating".parse::<Reduction>().unwrap(), Reduction::Alternating);
        assert_eq!(SamplerKind::Ddpm.to_string(), "ddpm");
        assert!("median".parse::<Reduction>().is_err());
    }
}

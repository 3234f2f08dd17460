//! Monte-Carlo certification that a view maps standard Gaussian noise to
//! standard Gaussian noise.
//!
//! For `ε ~ N(0, I)` the certifier accumulates, over `v(ε)`, the
//! per-coordinate mean and variance and the correlation of a set of
//! coordinate pairs (a uniform random sample plus every pair of spatially
//! adjacent pixels). Thresholds follow the estimators' standard errors:
//! `|mean| < 4/√n`, `|var - 1| < 5·√(2/n)`, `|corr| < 5/√n`.
//!
//! Samples are drawn in fixed-size chunks, each from its own seeded stream,
//! and chunk statistics are merged in chunk order, so the report does not
//! depend on how chunks are scheduled across threads.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{derived_rng, Dims, ImageTensor};
use crate::view::{View, ViewError};

pub const MIN_SAMPLES: usize = 1000;
pub const MIN_RANDOM_PAIRS: usize = 500;
pub const MEAN_SIGMAS: f64 = 4.0;
pub const VAR_SIGMAS: f64 = 5.0;
pub const CORR_SIGMAS: f64 = 5.0;
const CHUNK: usize = 256;
const PAIR_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("noise certification needs at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    View(#[from] ViewError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    FailMean,
    FailVariance,
    FailCorrelation,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::FailMean => "fail_mean",
            Self::FailVariance => "fail_variance",
            Self::FailCorrelation => "fail_correlation",
        }
    }

    pub fn is_pass(self) -> bool {
        self == Self::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub mean_max_abs: f64,
    pub var_low: f64,
    pub var_high: f64,
    pub offdiag_max_abs: f64,
}

impl Thresholds {
    pub fn for_samples(n: usize) -> Self {
        let n = n as f64;
        let band = VAR_SIGMAS * (2.0 / n).sqrt();
        Self {
            mean_max_abs: MEAN_SIGMAS / n.sqrt(),
            var_low: 1.0 - band,
            var_high: 1.0 + band,
            offdiag_max_abs: CORR_SIGMAS / n.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub view: String,
    pub n_samples: usize,
    pub dim: usize,
    pub seed: u64,
    pub mean_max_abs: f64,
    pub var_min: f64,
    pub var_max: f64,
    pub var_mean: f64,
    /// Largest absolute sample correlation over the checked pairs.
    pub offdiag_max_abs: f64,
    /// The pair attaining `offdiag_max_abs`.
    pub offdiag_worst_pair: (usize, usize),
    pub n_pairs: usize,
    pub thresholds: Thresholds,
    pub verdict: Verdict,
}

impl NoiseReport {
    pub fn mean_ok(&self) -> bool {
        self.mean_max_abs < self.thresholds.mean_max_abs
    }

    pub fn variance_ok(&self) -> bool {
        self.var_min > self.thresholds.var_low && self.var_max < self.thresholds.var_high
    }

    pub fn correlation_ok(&self) -> bool {
        self.offdiag_max_abs < self.thresholds.offdiag_max_abs
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let t = &self.thresholds;
        let mut s = String::new();
        let _ = writeln!(s, "view = {}", self.view);
        let _ = writeln!(s, "n_samples = {}", self.n_samples);
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mean_max_abs = {:.6e}", self.mean_max_abs);
        let _ = writeln!(s, "var_min = {:.6}", self.var_min);
        let _ = writeln!(s, "var_max = {:.6}", self.var_max);
        let _ = writeln!(s, "var_mean = {:.6}", self.var_mean);
        let _ = writeln!(s, "offdiag_max_abs = {:.6e}", self.offdiag_max_abs);
        let _ = writeln!(s, "offdiag_worst_pair = {},{}", self.offdiag_worst_pair.0, self.offdiag_worst_pair.1);
        let _ = writeln!(s, "n_pairs = {}", self.n_pairs);
        let _ = writeln!(s, "threshold.mean_max_abs = {:.6e}", t.mean_max_abs);
        let _ = writeln!(s, "threshold.var_low = {:.6}", t.var_low);
        let _ = writeln!(s, "threshold.var_high = {:.6}", t.var_high);
        let _ = writeln!(s, "threshold.offdiag_max_abs = {:.6e}", t.offdiag_max_abs);
        let _ = writeln!(s, "verdict = {}", self.verdict.as_str());
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Coordinate pairs checked for correlation: up to [`MIN_RANDOM_PAIRS`]
/// distinct random pairs (all pairs if there are fewer) plus all
/// horizontally and vertically adjacent pixels within a channel.
pub fn correlation_pairs(dims: Dims, seed: u64) -> Vec<(usize, usize)> {
    let n = dims.len();
    let mut pairs = BTreeSet::new();
    let total = n * (n - 1) / 2;
    if total <= MIN_RANDOM_PAIRS {
        for i in 0..n {
            for j in i + 1..n {
                pairs.insert((i, j));
            }
        }
    } else {
        let mut rng = derived_rng(seed, PAIR_STREAM);
        while pairs.len() < MIN_RANDOM_PAIRS {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if i != j {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
    }
    let (h, w) = (dims.height, dims.width);
    for c in 0..dims.channels {
        for y in 0..h {
            for x in 0..w {
                let i = (c * h + y) * w + x;
                if x + 1 < w {
                    pairs.insert((i, i + 1));
                }
                if y + 1 < h {
                    pairs.insert((i, i + w));
                }
            }
        }
    }
    pairs.into_iter().collect()
}

/// Sufficient statistics of a batch of samples.
#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    sum_prod: Vec<f64>,
}

impl Moments {
    fn zeros(dim: usize, pairs: usize) -> Self {
        Self { count: 0, sum: vec![0.0; dim], sum_sq: vec![0.0; dim], sum_prod: vec![0.0; pairs] }
    }

    fn add(&mut self, y: &[f64], pairs: &[(usize, usize)]) {
        self.count += 1;
        for (k, &v) in y.iter().enumerate() {
            self.sum[k] += v;
            self.sum_sq[k] += v * v;
        }
        for (acc, &(i, j)) in self.sum_prod.iter_mut().zip(pairs) {
            *acc += y[i] * y[j];
        }
    }

    fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        for (a, b) in self.sum_prod.iter_mut().zip(&other.sum_prod) {
            *a += b;
        }
    }
}

/// Draws `n_samples` standard Gaussian vectors, pushes them through `view`
/// and tests the output against `N(0, I)`.
pub fn certify_noise_preservation(view: &View, n_samples: usize, seed: u64) -> Result<NoiseReport, NoiseError> {
    if n_samples < MIN_SAMPLES {
        return Err(NoiseError::TooFewSamples(n_samples));
    }
    let dims = view.dims();
    let dim = dims.len();
    let pairs = correlation_pairs(dims, seed);
    let chunks = n_samples.div_ceil(CHUNK);
    let partial: Vec<Result<Moments, ViewError>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = derived_rng(seed, chunk as u64);
            let count = CHUNK.min(n_samples - chunk * CHUNK);
            let mut m = Moments::zeros(dim, pairs.len());
            for _ in 0..count {
                let eps: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let y = view.apply(&ImageTensor::new(dims, eps).map_err(ViewError::from)?)?;
                m.add(y.data(), &pairs);
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::zeros(dim, pairs.len());
    for m in partial {
        total.merge(&m?);
    }
    let n = total.count as f64;
    let mean: Vec<f64> = total.sum.iter().map(|s| s / n).collect();
    let var: Vec<f64> = total
        .sum_sq
        .iter()
        .zip(&mean)
        .map(|(s2, m)| ((s2 - n * m * m) / (n - 1.0)).max(0.0))
        .collect();
    let mut offdiag_max_abs = 0.0;
    let mut offdiag_worst_pair = pairs.first().copied().unwrap_or((0, 0));
    for (&sp, &(i, j)) in total.sum_prod.iter().zip(&pairs) {
        let cov = (sp - n * mean[i] * mean[j]) / (n - 1.0);
        let denom = (var[i] * var[j]).sqrt();
        let corr = if denom > 0.0 { cov / denom } else { 0.0 };
        if corr.abs() > offdiag_max_abs {
            offdiag_max_abs = corr.abs();
            offdiag_worst_pair = (i, j);
        }
    }
    let thresholds = Thresholds::for_samples(n_samples);
    let mut report = NoiseReport {
        view: view.kind().name().to_string(),
        n_samples,
        dim,
        seed,
        mean_max_abs: mean.iter().fold(0.0, |a, m| a.max(m.abs())),
        var_min: var.iter().copied().fold(f64::INFINITY, f64::min),
        var_max: var.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        var_mean: var.iter().sum::<f64>() / dim as f64,
        offdiag_max_abs,
        offdiag_worst_pair,
        n_pairs: pairs.len(),
        thresholds,
        verdict: Verdict::Pass,
    };
    report.verdict = if !report.correlation_ok() {
        Verdict::FailCorrelation
    } else if !report.variance_ok() {
        Verdict::FailVariance
    } else if !report.mean_ok() {
        Verdict::FailMean
    } else {
        Verdict::Pass
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_scale_with_samples() {
        let t = Thresholds::for_samples(10_000);
        assert!((t.mean_max_abs - 0.04).abs() < 1e-15);
        assert!((t.offdiag_max_abs - 0.05).abs() < 1e-15);
        assert!((t.var_high - (1.0 + 5.0 * 0.0002f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn identity_passes() {
        let v = View::identity(Dims::new(1, 6, 6));
        let r = certify_noise_preservation(&v, 10_000, 1).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{}", r.to_text());
        assert_eq!(r.dim, 36);
        assert!(r.n_pairs >= MIN_RANDOM_PAIRS);
    }

    #[test]
    fn too_few_samples() {
        let v = View::identity(Dims::new(1, 2, 2));
        assert!(matches!(certify_noise_preservation(&v, 999, 0), Err(NoiseError::TooFewSamples(999))));
    }

    #[test]
    fn pairs_include_neighbours_and_small_dims_use_all() {
        let d = Dims::new(1, 2, 2);
        assert_eq!(correlation_pairs(d, 0), vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let big = Dims::new(2, 8, 8);
        let p = correlation_pairs(big, 3);
        assert!(p.contains(&(64, 65)) && p.contains(&(64, 72)));
        assert!(p.len() >= MIN_RANDOM_PAIRS + 2 * 2 * 8 * 7 - 100);
        assert_eq!(p, correlation_pairs(big, 3));
    }

    #[test]
    fn text_and_json_agree() {
        let v = View::negate(Dims::new(1, 4, 4));
        let r = certify_noise_preservation(&v, 2000, 5).unwrap();
        assert!(r.to_text().contains("verdict = pass"));
        let back: NoiseReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}

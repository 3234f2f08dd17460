//! Alignment and concealment scores over an image/prompt score matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("score matrix is empty")]
    Empty,
    #[error("score matrix must be square: {rows} rows, {len} entries")]
    NotSquare { rows: usize, len: usize },
    #[error("score matrix entry {0} is not finite")]
    NonFinite(usize),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("quantile must lie in (0, 1), got {0}")]
    Quantile(f64),
    #[error("no records to aggregate")]
    NoRecords,
    #[error("embedding dimension mismatch: {0} vs {1}")]
    EmbeddingDim(usize, usize),
}

/// `S_ij = <image embedding of view i, text embedding of prompt j>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    n: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, MetricsError> {
        if n == 0 {
            return Err(MetricsError::Empty);
        }
        if data.len() != n * n {
            return Err(MetricsError::NotSquare { rows: n, len: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MetricsError> {
        Self::new(rows.len(), rows.iter().flatten().copied().collect())
    }

    /// Dot products of image embeddings (rows) against text embeddings (columns).
    pub fn from_embeddings(images: &[Vec<f64>], texts: &[Vec<f64>]) -> Result<Self, MetricsError> {
        if images.len() != texts.len() {
            return Err(MetricsError::NotSquare { rows: images.len(), len: images.len() * texts.len() });
        }
        let mut data = Vec::with_capacity(images.len() * texts.len());
        for img in images {
            for txt in texts {
                if img.len() != txt.len() {
                    return Err(MetricsError::EmbeddingDim(img.len(), txt.len()));
                }
                data.push(img.iter().zip(txt).map(|(a, b)| a * b).sum());
            }
        }
        Self::new(images.len(), data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        Self { n, data: (0..n * n).map(|k| self.get(k % n, k / n)).collect() }
    }

    /// `S'_{ij} = S_{p(i) p(j)}`: the same views and prompts in another order.
    pub fn permuted(&self, p: &[usize]) -> Self {
        let n = self.n;
        Self { n, data: (0..n * n).map(|k| self.get(p[k / n], p[k % n])).collect() }
    }
}

/// `min_i S_ii`.
pub fn alignment_score(s: &ScoreMatrix) -> f64 {
    s.diagonal().into_iter().fold(f64::INFINITY, f64::min)
}

/// Trace of the row-wise softmax of `S/τ`.
fn softmax_trace(s: &ScoreMatrix, tau: f64) -> f64 {
    let n = s.n();
    (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n).map(|j| s.get(i, j) / tau).collect();
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            (row[i] - m).exp() / z
        })
        .sum()
}

/// `(1/N) · ½ [tr softmax_rows(S/τ) + tr softmax_rows(Sᵀ/τ)]`.
pub fn concealment_score(s: &ScoreMatrix, tau: f64) -> Result<f64, MetricsError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(MetricsError::Temperature(tau));
    }
    let both = softmax_trace(s, tau) + softmax_trace(&s.transpose(), tau);
    Ok(both / 2.0 / s.n() as f64)
}

/// Nearest-rank quantile: the smallest value with at least `q·n` values at
/// or below it.
pub fn quantile(values: &[f64], q: f64) -> Result<f64, MetricsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(MetricsError::Quantile(q));
    }
    if values.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub prompts: Vec<String>,
    pub images: Vec<String>,
    pub alignment: f64,
    pub concealment: f64,
    pub scores: ScoreMatrix,
}

impl EvalRecord {
    pub fn new(id: String, prompts: Vec<String>, images: Vec<String>, scores: ScoreMatrix, tau: f64) -> Result<Self, MetricsError> {
        Ok(Self { id, prompts, images, alignment: alignment_score(&scores), concealment: concealment_score(&scores, tau)?, scores })
    }

    /// Diagonal entries, one point per record for density plots of `(S_00, S_11, ...)`.
    pub fn diagonal(&self) -> Vec<f64> {
        self.scores.diagonal()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub tau: f64,
    pub alignment: f64,
    pub alignment_q90: f64,
    pub alignment_q95: f64,
    pub concealment: f64,
    pub concealment_q90: f64,
    pub concealment_q95: f64,
}

pub fn quantile_metrics(records: &[EvalRecord], q: f64) -> Result<(f64, f64), MetricsError> {
    let a: Vec<f64> = records.iter().map(|r| r.alignment).collect();
    let c: Vec<f64> = records.iter().map(|r| r.concealment).collect();
    Ok((quantile(&a, q)?, quantile(&c, q)?))
}

pub fn summarize(records: &[EvalRecord], tau: f64) -> Result<Summary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    let n = records.len() as f64;
    let (a90, c90) = quantile_metrics(records, 0.9)?;
    let (a95, c95) = quantile_metrics(records, 0.95)?;
    Ok(Summary {
        records: records.len(),
        tau,
        alignment: records.iter().map(|r| r.alignment).sum::<f64>() / n,
        alignment_q90: a90,
        alignment_q95: a95,
        concealment: records.iter().map(|r| r.concealment).sum::<f64>() / n,
        concealment_q90: c90,
        concealment_q95: c95,
    })
}

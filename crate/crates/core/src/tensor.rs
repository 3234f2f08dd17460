//! Image tensors in channel-major, row-major layout.
//!
//! Values live in memory as `f64`; the on-disk and wire formats carry `f32`.

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shape of an image: channels × height × width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    /// Total number of scalar elements.
    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial positions in one channel plane.
    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// Parses `CxHxW`, e.g. `3x64x64`.
    pub fn parse(s: &str) -> Option<Self> {
        let parts: Vec<usize> = s
            .split(['x', 'X', ','])
            .map(|p| p.trim().parse().ok())
            .collect::<Option<_>>()?;
        match parts.as_slice() {
            [c, h, w] if *c > 0 && *h > 0 && *w > 0 => Some(Self::new(*c, *h, *w)),
            _ => None,
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("zero-sized dimension in {0}")]
    ZeroDim(Dims),
    #[error("data length {actual} does not match dims {dims} (expected {expected})")]
    Length { dims: Dims, expected: usize, actual: usize },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: Dims, actual: Dims },
}

/// A rank-3 image of real values. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    dims: Dims,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self, TensorError> {
        if dims.is_empty() {
            return Err(TensorError::ZeroDim(dims));
        }
        if data.len() != dims.len() {
            return Err(TensorError::Length { dims, expected: dims.len(), actual: data.len() });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TensorError::NonFinite { index, value });
        }
        Ok(Self { dims, data })
    }

    /// Builds a tensor without validation. Callers guarantee length and finiteness.
    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        Self { dims, data }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![0.0; dims.len()] }
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self { dims, data: vec![value; dims.len()] }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for c in 0..dims.channels {
            for y in 0..dims.height {
                for x in 0..dims.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { dims, data }
    }

    /// Standard normal tensor drawn from `rng`.
    pub fn randn<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        let data = (0..dims.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { dims, data }
    }

    /// Standard normal tensor from a fresh seeded stream.
    pub fn randn_seeded(dims: Dims, seed: u64) -> Self {
        Self::randn(dims, &mut seeded_rng(seed))
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.dims.height + y) * self.dims.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    pub fn ensure_dims(&self, expected: Dims) -> Result<(), TensorError> {
        if self.dims == expected {
            Ok(())
        } else {
            Err(TensorError::DimMismatch { expected, actual: self.dims })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, TensorError> {
        other.ensure_dims(self.dims)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { dims: self.dims, data })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<(), TensorError> {
        other.ensure_dims(self.dims)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute elementwise difference. Dims must agree.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Bitwise equality of every element.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// The RNG used for every seeded stream in the engine.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a label, e.g. a chunk index.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length_and_nan() {
        let d = Dims::new(1, 2, 2);
        assert!(matches!(ImageTensor::new(d, vec![0.0; 3]), Err(TensorError::Length { .. })));
        let err = ImageTensor::new(d, vec![0.0, f64::NAN, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { index: 1, .. }));
        assert!(matches!(ImageTensor::new(Dims::new(0, 2, 2), vec![]), Err(TensorError::ZeroDim(_))));
    }

    #[test]
    fn layout_is_channel_major() {
        let d = Dims::new(2, 2, 3);
        let t = ImageTensor::from_fn(d, |c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(t.data()[t.index(1, 1, 2)], 112.0);
        assert_eq!(t.data()[7], 101.0);
    }

    #[test]
    fn dims_parse() {
        assert_eq!(Dims::parse("3x64x64"), Some(Dims::new(3, 64, 64)));
        assert_eq!(Dims::parse("1x0x2"), None);
        assert_eq!(Dims::parse("3x64"), None);
    }

    #[test]
    fn seeded_streams_reproduce() {
        let d = Dims::new(1, 4, 4);
        assert!(ImageTensor::randn_seeded(d, 9).bit_eq(&ImageTensor::randn_seeded(d, 9)));
        assert!(!ImageTensor::randn_seeded(d, 9).bit_eq(&ImageTensor::randn_seeded(d, 10)));
    }
}

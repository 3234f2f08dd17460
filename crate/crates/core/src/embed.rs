//! Image and text embedding providers.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::denoiser::BackendError;
use crate::tensor::{derived_rng, seeded_rng, ImageTensor};

pub const TOY_EMBED_DIM: usize = 64;

pub trait Embedder: Sync {
    fn id(&self) -> String;
    fn embed_image(&self, image: &ImageTensor) -> Result<Vec<f64>, BackendError>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

/// Scales `v` to unit length; returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn hash_seed(domain: &str, bytes: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0]);
    h.update(bytes);
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn gaussian_unit(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut v);
    v
}

/// Deterministic embedder for tests. Text maps to a unit Gaussian vector
/// seeded by a hash of the string; an image maps to a normalized fixed
/// random projection of its pixels (seeded by its dims), so nearby images
/// get nearby embeddings.
#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    dim: usize,
}

impl ToyEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        Self::new(TOY_EMBED_DIM)
    }
}

impl Embedder for ToyEmbedder {
    fn id(&self) -> String {
        format!("toy(dim={})", self.dim)
    }

    fn embed_image(&self, image: &ImageTensor) -> Result<Vec<f64>, BackendError> {
        let seed = hash_seed("image-projection", image.dims().to_string().as_bytes());
        let mut out: Vec<f64> = (0..self.dim)
            .map(|row| {
                let mut rng = derived_rng(seed, row as u64);
                image.data().iter().map(|&x| x * rng.sample::<f64, _>(StandardNormal)).sum()
            })
            .collect();
        if normalize(&mut out) == 0.0 {
            return Ok(gaussian_unit(hash_seed("image-zero", &[]), self.dim));
        }
        Ok(out)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        Ok(gaussian_unit(hash_seed("text", text.as_bytes()), self.dim))
    }
}

/// Returns the same unit vector for every input.
#[derive(Debug, Clone)]
pub struct ConstantEmbedder {
    dim: usize,
}

impl ConstantEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }
}

impl Embedder for ConstantEmbedder {
    fn id(&self) -> String {
        format!("constant(dim={})", self.dim)
    }

    fn embed_image(&self, _image: &ImageTensor) -> Result<Vec<f64>, BackendError> {
        Ok(gaussian_unit(0, self.dim))
    }

    fn embed_text(&self, _text: &str) -> Result<Vec<f64>, BackendError> {
        Ok(gaussian_unit(0, self.dim))
    }
}

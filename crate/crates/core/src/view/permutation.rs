use rand::seq::SliceRandom;
use rand::Rng;

use super::ViewError;

/// A bijection on `0..n` with gather semantics: `output[i] = input[map[i]]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self, ViewError> {
        if map.is_empty() {
            return Err(ViewError::Invalid("empty permutation".into()));
        }
        let mut seen = vec![false; map.len()];
        for (i, &m) in map.iter().enumerate() {
            if m >= map.len() {
                return Err(ViewError::NotBijection(format!("map[{i}] = {m} out of range 0..{}", map.len())));
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(ViewError::NotBijection(format!("index {m} appears more than once")));
            }
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub(crate) fn from_map_unchecked(map: Vec<usize>) -> Self {
        debug_assert!(Self::new(map.clone()).is_ok());
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Self { map: inv }
    }

    /// The permutation equal to applying `self` first and then `next`.
    pub fn then(&self, next: &Self) -> Self {
        assert_eq!(self.len(), next.len(), "composing permutations of different sizes");
        Self { map: next.map.iter().map(|&j| self.map[j]).collect() }
    }

    pub fn gather<T: Copy>(&self, input: &[T]) -> Vec<T> {
        self.map.iter().map(|&j| input[j]).collect()
    }

    /// Lifts a plane permutation to every channel of a `channels × plane` vector.
    pub fn tile_channels(&self, channels: usize) -> Self {
        let plane = self.len();
        let mut map = Vec::with_capacity(plane * channels);
        for c in 0..channels {
            map.extend(self.map.iter().map(|&m| c * plane + m));
        }
        Self { map }
    }

    /// Recovers the plane permutation if `self` acts identically on each channel block.
    pub fn untile_channels(&self, channels: usize) -> Option<Self> {
        if channels == 0 || !self.len().is_multiple_of(channels) {
            return None;
        }
        let plane = self.len() / channels;
        let base = &self.map[..plane];
        if base.iter().any(|&m| m >= plane) {
            return None;
        }
        let uniform = (1..channels).all(|c| {
            self.map[c * plane..(c + 1) * plane]
                .iter()
                .zip(base)
                .all(|(&m, &b)| m == c * plane + b)
        });
        uniform.then(|| Self { map: base.to_vec() })
    }
}

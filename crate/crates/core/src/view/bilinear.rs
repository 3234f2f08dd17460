//! Views that are linear but do not preserve Gaussian noise statistics.

use super::{Admissibility, Operator, View, ViewError, ViewKind};
use crate::tensor::Dims;
use std::sync::Arc;

/// Row-sparse linear map on a flattened vector: `out[i] = Σ w · in[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLinear {
    rows: Vec<Vec<(usize, f64)>>,
    /// Best-effort inverse, if one is known.
    approx_inverse: Option<Box<SparseLinear>>,
}

impl SparseLinear {
    pub fn new(rows: Vec<Vec<(usize, f64)>>) -> Self {
        Self { rows, approx_inverse: None }
    }

    pub fn with_approx_inverse(mut self, inverse: SparseLinear) -> Self {
        self.approx_inverse = Some(Box::new(SparseLinear::new(inverse.rows)));
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * x[j]).sum())
            .collect()
    }

    /// The recorded best-effort inverse, or the transpose when none is known.
    pub fn pseudo_inverse(&self) -> Self {
        let forward = SparseLinear::new(self.rows.clone());
        match &self.approx_inverse {
            Some(inv) => SparseLinear { rows: inv.rows.clone(), approx_inverse: Some(Box::new(forward)) },
            None => {
                let mut rows = vec![Vec::new(); self.rows.len()];
                for (i, row) in self.rows.iter().enumerate() {
                    for &(j, w) in row {
                        rows[j].push((i, w));
                    }
                }
                SparseLinear { rows, approx_inverse: Some(Box::new(forward)) }
            }
        }
    }
}

/// Bilinear resampling of every channel under a clockwise rotation by
/// `degrees` about the image centre, zero outside the source image.
fn bilinear_rotation(dims: Dims, degrees: f64) -> SparseLinear {
    let (h, w) = (dims.height, dims.width);
    let plane = dims.plane();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mut plane_rows = Vec::with_capacity(plane);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sy = cy + dy * cos - dx * sin;
            let sx = cx + dy * sin + dx * cos;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let mut row = Vec::with_capacity(4);
            for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let (yy, xx) = (y0 + oy, x0 + ox);
                    let wt = wy * wx;
                    if wt != 0.0 && yy >= 0.0 && xx >= 0.0 && yy < h as f64 && xx < w as f64 {
                        row.push((yy as usize * w + xx as usize, wt));
                    }
                }
            }
            plane_rows.push(row);
        }
    }
    let mut rows = Vec::with_capacity(dims.len());
    for c in 0..dims.channels {
        rows.extend(
            plane_rows
                .iter()
                .map(|r| r.iter().map(|&(j, wt)| (c * plane + j, wt)).collect::<Vec<_>>()),
        );
    }
    SparseLinear::new(rows)
}

impl View {
    /// Multiplies every element by `factor`.
    pub fn broken_scale(dims: Dims, factor: f64) -> Result<Self, ViewError> {
        if !factor.is_finite() || factor == 0.0 {
            return Err(ViewError::Invalid(format!("scale factor must be finite and non-zero, got {factor}")));
        }
        Ok(Self::from_operator(ViewKind::BrokenScale(factor), Admissibility::KnownBroken, dims, Operator::Scale(factor)))
    }

    /// Clockwise rotation by an arbitrary angle using bilinear interpolation.
    /// The inverse is the bilinear rotation by `-degrees`.
    pub fn broken_bilinear_rotate(dims: Dims, degrees: f64) -> Result<Self, ViewError> {
        if !degrees.is_finite() {
            return Err(ViewError::Invalid(format!("rotation angle must be finite, got {degrees}")));
        }
        let op = bilinear_rotation(dims, degrees).with_approx_inverse(bilinear_rotation(dims, -degrees));
        Ok(Self::from_operator(
            ViewKind::BrokenBilinearRotate { degrees },
            Admissibility::KnownBroken,
            dims,
            Operator::Sparse(Arc::new(op)),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ImageTensor;
    use crate::view::{InverseExactness, Quarter};

    #[test]
    fn scale_inverse_divides() {
        let d = Dims::new(1, 2, 2);
        let v = View::broken_scale(d, 2.0).unwrap();
        let x = ImageTensor::new(d, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(v.apply(&x).unwrap().data(), &[2.0, -4.0, 1.0, 6.0]);
        let (back, exact) = v.apply_inverse_checked(&v.apply(&x).unwrap()).unwrap();
        assert_eq!(exact, InverseExactness::BestEffort);
        assert!(back.bit_eq(&x));
        assert!(View::broken_scale(d, 0.0).is_err());
        assert!(View::broken_scale(d, f64::NAN).is_err());
    }

    #[test]
    fn bilinear_quarter_turn_matches_exact_rotation() {
        let d = Dims::new(2, 5, 5);
        let b = View::broken_bilinear_rotate(d, 90.0).unwrap();
        let r = View::rotate_cw(d, Quarter::Cw90).unwrap();
        let x = ImageTensor::randn_seeded(d, 9);
        assert!(b.apply(&x).unwrap().max_abs_diff(&r.apply(&x).unwrap()) < 1e-12);
    }

    #[test]
    fn bilinear_45_is_not_orthogonal() {
        let d = Dims::new(1, 6, 6);
        let b = View::broken_bilinear_rotate(d, 45.0).unwrap();
        assert!(b.orthogonality_residual(1000).unwrap() > 0.1);
        // corners fall outside the rotated source and are zero-padded
        let x = ImageTensor::filled(d, 1.0);
        assert_eq!(b.apply(&x).unwrap().get(0, 0, 0), 0.0);
    }

    #[test]
    fn transpose_fallback() {
        let s = SparseLinear::new(vec![vec![(1, 2.0)], vec![(0, 3.0)]]);
        let t = s.pseudo_inverse();
        assert_eq!(t.apply(&[1.0, 1.0]), vec![3.0, 2.0]);
        assert_eq!(t.pseudo_inverse().apply(&[1.0, 1.0]), vec![2.0, 3.0]);
    }
}

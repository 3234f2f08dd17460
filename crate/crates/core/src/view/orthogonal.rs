use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Admissibility, Operator, View, ViewError, ViewKind};
use crate::tensor::{seeded_rng, Dims};

/// Largest flattened dimension for which dense `n × n` matrices are built.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Accepted `max |A A^T - I|` for a general orthogonal view.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-5;

/// `max |A A^T - I|`, or infinity for a non-square matrix.
pub fn residual(a: &DMatrix<f64>) -> f64 {
    if a.nrows() != a.ncols() {
        return f64::INFINITY;
    }
    let mut aat = a * a.transpose();
    for i in 0..a.nrows() {
        aat[(i, i)] -= 1.0;
    }
    aat.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// A Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix
/// with column signs chosen so that `R` has a positive diagonal.
pub fn haar_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl View {
    /// A seeded Haar-random orthogonal view on the full flattened vector.
    ///
    /// Entries are rounded to `f32` so the matrix survives a round trip
    /// through the tensor file format unchanged.
    pub fn random_orthogonal(dims: Dims, seed: u64) -> Result<Self, ViewError> {
        Self::random_orthogonal_with_cap(dims, seed, DEFAULT_DENSE_CAP)
    }

    pub fn random_orthogonal_with_cap(dims: Dims, seed: u64, cap: usize) -> Result<Self, ViewError> {
        let n = dims.len();
        if n > cap {
            return Err(ViewError::TooLarge { n, cap });
        }
        let q = haar_orthogonal(n, &mut seeded_rng(seed)).map(|v| v as f32 as f64);
        Self::orthogonal_matrix(dims, q)
    }

    /// Wraps an orthogonal `n × n` matrix acting on the flattened image.
    pub fn orthogonal_matrix(dims: Dims, matrix: DMatrix<f64>) -> Result<Self, ViewError> {
        let n = dims.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(ViewError::Invalid(format!(
                "orthogonal matrix is {}x{} but the image has {n} elements",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(ViewError::Invalid("orthogonal matrix has non-finite entries".into()));
        }
        let res = residual(&matrix);
        if res >= ORTHOGONALITY_TOLERANCE {
            return Err(ViewError::NotOrthogonal { residual: res });
        }
        Ok(Self::from_operator(
            ViewKind::OrthogonalMatrix,
            Admissibility::GeneralOrthogonal,
            dims,
            Operator::Dense { matrix: Arc::new(matrix), transposed: false },
        ))
    }
}

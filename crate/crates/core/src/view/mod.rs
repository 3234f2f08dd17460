//! Invertible linear views on images.
//!
//! A [`View`] is compiled once into a flat operator (a gather map, a signed
//! gather map, a dense matrix, or one of the deliberately broken operators)
//! and is immutable afterwards, so `apply`/`apply_inverse` can be shared
//! freely across threads.

mod bilinear;
mod geometry;
mod jigsaw;
mod orthogonal;
mod permutation;
mod serialize;
mod spec;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::FormatError;
use crate::tensor::{Dims, ImageTensor, TensorError};

pub use bilinear::SparseLinear;
pub use geometry::{FlipAxis, Quarter};
pub use jigsaw::{Dihedral, JigsawLayout, JigsawPlacement, PieceShape};
pub use orthogonal::{haar_orthogonal, DEFAULT_DENSE_CAP, ORTHOGONALITY_TOLERANCE};
pub use permutation::Permutation;
pub use serialize::{parse_view, serialize_view};
pub use spec::{admissible_catalog, BuildOptions, JigsawSource, OrthoSource, ViewSpec};

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("view expects dims {expected}, got {actual}")]
    DimMismatch { expected: Dims, actual: Dims },
    #[error("not a bijection: {0}")]
    NotBijection(String),
    #[error("invalid view: {0}")]
    Invalid(String),
    #[error("view requires a square image, got {0}")]
    NotSquare(Dims),
    #[error("dense view of dimension {n} exceeds cap {cap}; use a smaller image (n = channels*height*width)")]
    TooLarge { n: usize, cap: usize },
    #[error("matrix is not orthogonal: max |A A^T - I| = {residual:e}")]
    NotOrthogonal { residual: f64 },
    #[error("pieces do not tile the image: {}", describe_tiling(.uncovered, .double_covered))]
    Tiling { uncovered: Vec<(usize, usize)>, double_covered: Vec<(usize, usize)> },
    #[error("jigsaw shape mismatch: {0}")]
    Shape(String),
    #[error("no variance transport defined for {0} views")]
    NoVarianceTransport(&'static str),
    #[error("view `{0}` cannot be serialized to a file")]
    NotSerializable(String),
    #[error("bad view spec `{spec}`: {reason}")]
    Spec { spec: String, reason: String },
    #[error(transparent)]
    Format(#[from] FormatError),
}

fn describe_tiling(uncovered: &[(usize, usize)], double: &[(usize, usize)]) -> String {
    const SHOW: usize = 16;
    let list = |v: &[(usize, usize)]| {
        let head: Vec<String> = v.iter().take(SHOW).map(|(y, x)| format!("({y},{x})")).collect();
        let more = if v.len() > SHOW { format!(" and {} more", v.len() - SHOW) } else { String::new() };
        format!("{} [{}{more}]", v.len(), head.join(" "))
    };
    format!("uncovered {}, double-covered {}", list(uncovered), list(double))
}

impl From<TensorError> for ViewError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::DimMismatch { expected, actual } => Self::DimMismatch { expected, actual },
            other => Self::Invalid(other.to_string()),
        }
    }
}

/// How strongly a view preserves standard Gaussian noise. Ordered from
/// strongest to weakest, so the weakest member of a set is its maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admissibility {
    ExactPermutation,
    SignedPermutation,
    GeneralOrthogonal,
    KnownBroken,
}

impl Admissibility {
    pub fn is_admissible(self) -> bool {
        self != Self::KnownBroken
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ExactPermutation => "exact_permutation",
            Self::SignedPermutation => "signed_permutation",
            Self::GeneralOrthogonal => "general_orthogonal",
            Self::KnownBroken => "known_broken",
        }
    }
}

impl fmt::Display for Admissibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How faithfully `apply_inverse` undoes `apply`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseExactness {
    /// Bit-exact.
    Exact,
    /// Exact up to floating-point rounding of a dense product.
    Rounding,
    /// A best-effort approximation; the view has no true inverse.
    BestEffort,
}

/// Descriptive metadata for a view.
#[derive(Debug, Clone, PartialEq)]
pub enum ViewKind {
    Identity,
    RotateCw(Quarter),
    Flip(FlipAxis),
    /// Per-column downward roll offsets.
    Skew { offsets: Vec<i64> },
    /// `grid × grid` square patches permuted by `patches`.
    PatchPermutation { grid: usize, patches: Permutation },
    PixelPermutation,
    /// `assignment[slot]` is the piece moved into `slot`.
    Jigsaw { assignment: Vec<usize> },
    InnerRotation { center: (f64, f64), radius: f64, ring_offsets: Vec<i64> },
    Negate,
    OrthogonalMatrix,
    Composite(Vec<ViewKind>),
    BrokenScale(f64),
    BrokenBilinearRotate { degrees: f64 },
}

impl ViewKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::RotateCw(_) => "rotate_cw",
            Self::Flip(_) => "flip",
            Self::Skew { .. } => "skew",
            Self::PatchPermutation { .. } => "patch_permutation",
            Self::PixelPermutation => "pixel_permutation",
            Self::Jigsaw { .. } => "jigsaw",
            Self::InnerRotation { .. } => "inner_rotation",
            Self::Negate => "negate",
            Self::OrthogonalMatrix => "orthogonal_matrix",
            Self::Composite(_) => "composite",
            Self::BrokenScale(_) => "broken_scale",
            Self::BrokenBilinearRotate { .. } => "broken_bilinear_rotate",
        }
    }
}

/// Compiled linear operator on the flattened image vector.
#[derive(Debug, Clone)]
pub(crate) enum Operator {
    Perm(Arc<Permutation>),
    /// `out[i] = (negate[i] ? -1 : 1) * in[perm[i]]`
    SignedPerm { perm: Arc<Permutation>, negate: Arc<Vec<bool>> },
    Dense { matrix: Arc<DMatrix<f64>>, transposed: bool },
    Scale(f64),
    Sparse(Arc<SparseLinear>),
    Chain(Vec<Operator>),
}

impl Operator {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Perm(p) => p.gather(x),
            Self::SignedPerm { perm, negate } => perm
                .map()
                .iter()
                .zip(negate.iter())
                .map(|(&j, &neg)| if neg { -x[j] } else { x[j] })
                .collect(),
            // sums run in column order either way, so a stored transpose
            // reproduces `transposed` application bit for bit
            Self::Dense { matrix, transposed: true } => {
                matrix.column_iter().map(|col| col.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
            }
            Self::Dense { matrix, transposed: false } => {
                matrix.row_iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
            }
            Self::Scale(c) => x.iter().map(|v| v * c).collect(),
            Self::Sparse(s) => s.apply(x),
            Self::Chain(ops) => {
                let mut cur = x.to_vec();
                for op in ops {
                    cur = op.apply(&cur);
                }
                cur
            }
        }
    }

    fn inverse(&self) -> Self {
        match self {
            Self::Perm(p) => Self::Perm(Arc::new(p.inverse())),
            Self::SignedPerm { perm, negate } => {
                let inv = perm.inverse();
                let neg = inv.map().iter().map(|&j| negate[j]).collect();
                Self::SignedPerm { perm: Arc::new(inv), negate: Arc::new(neg) }
            }
            Self::Dense { matrix, transposed } => {
                Self::Dense { matrix: Arc::clone(matrix), transposed: !transposed }
            }
            Self::Scale(c) => Self::Scale(1.0 / c),
            Self::Sparse(s) => Self::Sparse(Arc::new(s.pseudo_inverse())),
            Self::Chain(ops) => Self::Chain(ops.iter().rev().map(Self::inverse).collect()),
        }
    }

    /// Inverse transport for per-element log-variances: the permutation part only.
    fn transport_log_var(&self, x: &[f64]) -> Result<Vec<f64>, ViewError> {
        match self {
            Self::Perm(p) | Self::SignedPerm { perm: p, .. } => Ok(p.gather(x)),
            Self::Dense { .. } => Err(ViewError::NoVarianceTransport("general_orthogonal")),
            Self::Scale(_) | Self::Sparse(_) => Err(ViewError::NoVarianceTransport("known_broken")),
            Self::Chain(ops) => {
                let mut cur = x.to_vec();
                for op in ops {
                    cur = op.transport_log_var(&cur)?;
                }
                Ok(cur)
            }
        }
    }

    fn is_broken(&self) -> bool {
        match self {
            Self::Scale(_) | Self::Sparse(_) => true,
            Self::Chain(ops) => ops.iter().any(Self::is_broken),
            _ => false,
        }
    }

    fn as_dense(&self, n: usize) -> DMatrix<f64> {
        match self {
            Self::Dense { matrix, transposed: false } => (**matrix).clone(),
            Self::Dense { matrix, transposed: true } => matrix.transpose(),
            _ => {
                let mut m = DMatrix::zeros(n, n);
                let mut e = vec![0.0; n];
                for j in 0..n {
                    e[j] = 1.0;
                    let col = self.apply(&e);
                    m.set_column(j, &DVector::from_vec(col));
                    e[j] = 0.0;
                }
                m
            }
        }
    }

    /// Sequential composition: `self` first, then `next`.
    fn then(self, next: Self, n: usize, dense_cap: usize) -> Result<Self, ViewError> {
        use Operator::*;
        if self.is_broken() || next.is_broken() {
            let mut ops = match self {
                Chain(v) => v,
                op => vec![op],
            };
            match next {
                Chain(v) => ops.extend(v),
                op => ops.push(op),
            }
            return Ok(Chain(ops));
        }
        Ok(match (self, next) {
            (Perm(a), Perm(b)) => Perm(Arc::new(a.then(&b))),
            (a @ (Perm(_) | SignedPerm { .. }), b @ (Perm(_) | SignedPerm { .. })) => {
                let (pa, na) = a.signed_parts(n);
                let (pb, nb) = b.signed_parts(n);
                // out[i] = nb[i] * (na[pb[i]] * x[pa[pb[i]]])
                let negate: Vec<bool> = pb.map().iter().zip(&nb).map(|(&j, &s)| s ^ na[j]).collect();
                let perm = pa.then(&pb);
                if negate.iter().any(|&s| s) {
                    SignedPerm { perm: Arc::new(perm), negate: Arc::new(negate) }
                } else {
                    Perm(Arc::new(perm))
                }
            }
            (a, b) => {
                if n > dense_cap {
                    return Err(ViewError::TooLarge { n, cap: dense_cap });
                }
                let product = b.as_dense(n) * a.as_dense(n);
                Dense { matrix: Arc::new(product), transposed: false }
            }
        })
    }

    fn signed_parts(&self, n: usize) -> (Permutation, Vec<bool>) {
        match self {
            Self::Perm(p) => ((**p).clone(), vec![false; n]),
            Self::SignedPerm { perm, negate } => ((**perm).clone(), (**negate).clone()),
            _ => unreachable!("signed_parts on non-permutation operator"),
        }
    }
}

/// An invertible (or deliberately broken) linear transform on images of fixed dims.
#[derive(Debug, Clone)]
pub struct View {
    kind: ViewKind,
    admissibility: Admissibility,
    dims: Dims,
    forward: Operator,
    inverse: Operator,
}

impl View {
    pub(crate) fn from_operator(kind: ViewKind, admissibility: Admissibility, dims: Dims, forward: Operator) -> Self {
        let inverse = forward.inverse();
        Self { kind, admissibility, dims, forward, inverse }
    }

    pub(crate) fn from_plane_perm(kind: ViewKind, dims: Dims, plane: Permutation) -> Self {
        let full = plane.tile_channels(dims.channels);
        Self::from_operator(kind, Admissibility::ExactPermutation, dims, Operator::Perm(Arc::new(full)))
    }

    pub fn kind(&self) -> &ViewKind {
        &self.kind
    }

    pub fn admissibility(&self) -> Admissibility {
        self.admissibility
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn inverse_exactness(&self) -> InverseExactness {
        match self.admissibility {
            Admissibility::ExactPermutation | Admissibility::SignedPermutation => InverseExactness::Exact,
            Admissibility::GeneralOrthogonal => InverseExactness::Rounding,
            Admissibility::KnownBroken => InverseExactness::BestEffort,
        }
    }

    /// The full-vector gather map, when the view is an unsigned permutation.
    pub fn permutation(&self) -> Option<&Permutation> {
        match &self.forward {
            Operator::Perm(p) => Some(p),
            _ => None,
        }
    }

    /// The full-vector gather map and negation mask of a signed permutation view.
    pub fn signed_permutation(&self) -> Option<(&Permutation, &[bool])> {
        match &self.forward {
            Operator::SignedPerm { perm, negate } => Some((perm, negate)),
            _ => None,
        }
    }

    pub fn dense_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.forward {
            Operator::Dense { matrix, transposed: false } => Some(matrix),
            _ => None,
        }
    }

    pub fn apply(&self, x: &ImageTensor) -> Result<ImageTensor, ViewError> {
        x.ensure_dims(self.dims)?;
        Ok(ImageTensor::from_raw(self.dims, self.forward.apply(x.data())))
    }

    pub fn apply_inverse(&self, x: &ImageTensor) -> Result<ImageTensor, ViewError> {
        x.ensure_dims(self.dims)?;
        Ok(ImageTensor::from_raw(self.dims, self.inverse.apply(x.data())))
    }

    /// Inverse plus a flag describing how exact it is.
    pub fn apply_inverse_checked(&self, x: &ImageTensor) -> Result<(ImageTensor, InverseExactness), ViewError> {
        Ok((self.apply_inverse(x)?, self.inverse_exactness()))
    }

    /// Maps a per-element log-variance estimate back to the original frame.
    ///
    /// Only the permutation part of a view moves variances; values keep
    /// their sign (a negated pixel has the same variance). Dense and broken
    /// views have no variance transport.
    pub fn transport_log_var_inverse(&self, log_var: &ImageTensor) -> Result<ImageTensor, ViewError> {
        log_var.ensure_dims(self.dims)?;
        Ok(ImageTensor::from_raw(self.dims, self.inverse.transport_log_var(log_var.data())?))
    }

    /// The implied matrix `A` with `v(x) = A x`. Requires `n <= cap`.
    pub fn implied_matrix(&self, cap: usize) -> Result<DMatrix<f64>, ViewError> {
        let n = self.dims.len();
        if n > cap {
            return Err(ViewError::TooLarge { n, cap });
        }
        Ok(self.forward.as_dense(n))
    }

    /// `max |A A^T - I|`. Zero by construction for permutation classes
    /// (bijection validated when the map was built); computed from the
    /// matrix otherwise.
    pub fn orthogonality_residual(&self, cap: usize) -> Result<f64, ViewError> {
        match &self.forward {
            Operator::Perm(p) | Operator::SignedPerm { perm: p, .. } => {
                Permutation::new(p.map().to_vec())?;
                Ok(0.0)
            }
            Operator::Dense { matrix, .. } => Ok(orthogonal::residual(matrix)),
            _ => Ok(orthogonal::residual(&self.implied_matrix(cap)?)),
        }
    }

    /// The view whose forward map is this view's inverse.
    pub fn inverse_view(&self) -> View {
        Self {
            kind: self.kind.clone(),
            admissibility: self.admissibility,
            dims: self.dims,
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    /// Applies `views` in order (first element first).
    pub fn composite(views: &[View]) -> Result<View, ViewError> {
        Self::composite_with_cap(views, DEFAULT_DENSE_CAP)
    }

    pub fn composite_with_cap(views: &[View], dense_cap: usize) -> Result<View, ViewError> {
        let first = views.first().ok_or_else(|| ViewError::Invalid("empty composite".into()))?;
        let dims = first.dims;
        if let Some(bad) = views.iter().find(|v| v.dims != dims) {
            return Err(ViewError::DimMismatch { expected: dims, actual: bad.dims });
        }
        let mut op = first.forward.clone();
        for v in &views[1..] {
            op = op.then(v.forward.clone(), dims.len(), dense_cap)?;
        }
        let admissibility = views.iter().map(|v| v.admissibility).max().unwrap();
        let kind = ViewKind::Composite(views.iter().map(|v| v.kind.clone()).collect());
        Ok(Self::from_operator(kind, admissibility, dims, op))
    }
}

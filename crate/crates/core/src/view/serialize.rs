//! File serialization of views.
//!
//! Unsigned permutations are written as permutation files (over one plane
//! when the view acts identically on every channel), signed permutations as
//! signed permutation files, and dense orthogonal views as rank-2 tensor
//! files holding the `n × n` matrix.

use nalgebra::DMatrix;

use super::{Operator, Permutation, View, ViewError};
use crate::format::{
    decode_tensor, encode_tensor, parse_perm_file, parse_signed_perm_file, write_perm_file, write_signed_perm_file,
    FormatError, RawTensor, TENSOR_MAGIC,
};
use crate::tensor::Dims;

pub fn serialize_view(view: &View) -> Result<Vec<u8>, ViewError> {
    let n = view.dims.len();
    match &view.forward {
        Operator::Perm(p) => {
            let map = match p.untile_channels(view.dims.channels) {
                Some(plane) => plane.map().to_vec(),
                None => p.map().to_vec(),
            };
            Ok(write_perm_file(&map))
        }
        Operator::SignedPerm { perm, negate } => Ok(write_signed_perm_file(perm.map(), negate)),
        op @ Operator::Dense { .. } => {
            // nalgebra is column-major; the file stores rows first
            let m = op.as_dense(n);
            let data = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] as f32).collect();
            Ok(encode_tensor(&RawTensor { dims: vec![n, n], data }))
        }
        _ => Err(ViewError::NotSerializable(view.kind.name().to_string())),
    }
}

/// Reads a view file for images of `dims`.
pub fn parse_view(bytes: &[u8], dims: Dims) -> Result<View, ViewError> {
    if bytes.starts_with(TENSOR_MAGIC) {
        let raw = decode_tensor(bytes)?;
        let n = dims.len();
        if raw.dims != [n, n] {
            return Err(FormatError::Parse {
                offset: 4,
                message: format!("expected a {n}x{n} matrix for {dims}, found dims {:?}", raw.dims),
            }
            .into());
        }
        let m = DMatrix::from_row_iterator(n, n, raw.data.into_iter().map(f64::from));
        return View::orthogonal_matrix(dims, m);
    }
    let start = bytes.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(bytes.len());
    if bytes[start..].starts_with(b"signed_perm") {
        let (map, negate) = parse_signed_perm_file(bytes)?;
        return View::from_signed_permutation(dims, Permutation::new(map)?, negate);
    }
    let map = parse_perm_file(bytes)?;
    View::pixel_permutation(dims, Permutation::new(map)?)
}

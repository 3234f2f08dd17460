//! On-disk formats.
//!
//! * Tensor file (binary, little-endian): magic `NTEN`, `u32` rank,
//!   `u32` dims[rank], then `f32` data in row-major order of the dims.
//! * Permutation file (text): `perm <n>` followed by `n` whitespace-separated
//!   0-based indices with `output[i] = input[map[i]]`.
//! * Signed permutation file (text): `signed_perm <n>` followed by `n`
//!   entries, each an index optionally prefixed with `-` to negate the
//!   gathered value (`-0` is allowed).

use std::path::Path;

use thiserror::Error;

use crate::tensor::{Dims, ImageTensor, TensorError};

pub const TENSOR_MAGIC: &[u8; 4] = b"NTEN";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    fn at(offset: usize, message: impl Into<String>) -> Self {
        Self::Parse { offset, message: message.into() }
    }
}

/// A tensor of arbitrary rank as stored in a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn from_image(t: &ImageTensor) -> Self {
        let d = t.dims();
        Self {
            dims: vec![d.channels, d.height, d.width],
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn into_image(self) -> Result<ImageTensor, FormatError> {
        let dims = match self.dims.as_slice() {
            [c, h, w] => Dims::new(*c, *h, *w),
            other => {
                return Err(FormatError::at(4, format!("expected rank 3 image tensor, found rank {}", other.len())))
            }
        };
        Ok(ImageTensor::new(dims, self.data.into_iter().map(f64::from).collect())?)
    }
}

pub fn encode_tensor(t: &RawTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<RawTensor, FormatError> {
    let read_u32 = |offset: usize, what: &str| -> Result<u32, FormatError> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| FormatError::at(offset, format!("truncated while reading {what}")))
    };
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(FormatError::at(0, "missing NTEN magic"));
    }
    let rank = read_u32(4, "rank")? as usize;
    if rank == 0 || rank > 8 {
        return Err(FormatError::at(4, format!("unsupported rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let offset = 8 + 4 * i;
        let d = read_u32(offset, "dims")? as usize;
        if d == 0 {
            return Err(FormatError::at(offset, "zero-sized dimension"));
        }
        dims.push(d);
    }
    let header = 8 + 4 * rank;
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let expected = count
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| FormatError::at(8, "dimension product overflows"))?;
    let payload = bytes.len() - header;
    if payload != expected {
        return Err(FormatError::at(
            header,
            format!("expected {expected} data bytes, found {payload}"),
        ));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(RawTensor { dims, data })
}

pub fn encode_image(t: &ImageTensor) -> Vec<u8> {
    encode_tensor(&RawTensor::from_image(t))
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor, FormatError> {
    decode_tensor(bytes)?.into_image()
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    std::fs::write(path, bytes).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

/// Whitespace tokenizer that remembers byte offsets for error reporting.
pub(crate) struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn next_token(&mut self) -> Option<(usize, &'a str)> {
        let rest = &self.text[self.pos..];
        let start = self.pos + rest.len() - rest.trim_start().len();
        let tail = &self.text[start..];
        if tail.is_empty() {
            self.pos = self.text.len();
            return None;
        }
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        self.pos = start + len;
        Some((start, &tail[..len]))
    }
}

fn as_text(bytes: &[u8]) -> Result<&str, FormatError> {
    std::str::from_utf8(bytes).map_err(|e| FormatError::at(e.valid_up_to(), "invalid UTF-8"))
}

fn parse_header(tokens: &mut Tokens<'_>, keyword: &str) -> Result<usize, FormatError> {
    match tokens.next_token() {
        Some((_, k)) if k == keyword => {}
        Some((off, k)) => return Err(FormatError::at(off, format!("expected `{keyword}`, found `{k}`"))),
        None => return Err(FormatError::at(0, format!("empty file, expected `{keyword}`"))),
    }
    let (off, n) = tokens
        .next_token()
        .ok_or_else(|| FormatError::at(tokens.offset(), "missing length"))?;
    let n: usize = n.parse().map_err(|_| FormatError::at(off, format!("invalid length `{n}`")))?;
    if n == 0 {
        return Err(FormatError::at(off, "length must be positive"));
    }
    Ok(n)
}

/// Entries of a (possibly signed) permutation file: `(index, negated)`.
fn parse_entries(text: &str, keyword: &str, allow_sign: bool) -> Result<Vec<(usize, bool)>, FormatError> {
    let mut tokens = Tokens::new(text);
    let n = parse_header(&mut tokens, keyword)?;
    let mut seen = vec![false; n];
    let mut entries = Vec::with_capacity(n);
    while let Some((off, tok)) = tokens.next_token() {
        if entries.len() == n {
            return Err(FormatError::at(off, format!("more than {n} entries")));
        }
        let (negated, digits) = match tok.strip_prefix('-') {
            Some(d) if allow_sign => (true, d),
            _ => (false, tok),
        };
        let idx: usize = digits
            .parse()
            .map_err(|_| FormatError::at(off, format!("invalid index `{tok}`")))?;
        if idx >= n {
            return Err(FormatError::at(off, format!("index {idx} out of range for n = {n}")));
        }
        if std::mem::replace(&mut seen[idx], true) {
            return Err(FormatError::at(off, format!("duplicate index {idx}: not a bijection")));
        }
        entries.push((idx, negated));
    }
    if entries.len() != n {
        return Err(FormatError::at(text.len(), format!("expected {n} entries, found {}", entries.len())));
    }
    Ok(entries)
}

pub fn parse_perm_file(bytes: &[u8]) -> Result<Vec<usize>, FormatError> {
    let entries = parse_entries(as_text(bytes)?, "perm", false)?;
    Ok(entries.into_iter().map(|(i, _)| i).collect())
}

pub fn write_perm_file(map: &[usize]) -> Vec<u8> {
    let mut s = format!("perm {}\n", map.len());
    write_index_lines(&mut s, map.iter().map(|i| i.to_string()));
    s.into_bytes()
}

pub fn parse_signed_perm_file(bytes: &[u8]) -> Result<(Vec<usize>, Vec<bool>), FormatError> {
    let entries = parse_entries(as_text(bytes)?, "signed_perm", true)?;
    Ok(entries.into_iter().unzip())
}

pub fn write_signed_perm_file(map: &[usize], negated: &[bool]) -> Vec<u8> {
    let mut s = format!("signed_perm {}\n", map.len());
    write_index_lines(
        &mut s,
        map.iter().zip(negated).map(|(i, &neg)| if neg { format!("-{i}") } else { i.to_string() }),
    );
    s.into_bytes()
}

fn write_index_lines(s: &mut String, items: impl Iterator<Item = String>) {
    for (k, item) in items.enumerate() {
        if k > 0 {
            s.push(if k % 16 == 0 { '\n' } else { ' ' });
        }
        s.push_str(&item);
    }
    s.push('\n');
}

pub mod dataset;
pub mod eval;
pub mod frames;
pub mod generate;
pub mod verify;

use std::path::Path;

use anagram_core::format::{decode_image, encode_image};
use anagram_core::tensor::ImageTensor;

use crate::error::CliError;

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_tensor(path: &Path, t: &ImageTensor) -> Result<(), CliError> {
    write(path, encode_image(t))
}

/// Loads a tensor file, or a PNG by extension.
pub(crate) fn read_image(path: &Path) -> Result<ImageTensor, CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        return crate::png::read_png(path);
    }
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_image(&bytes).map_err(|e| CliError::io(path, e))
}

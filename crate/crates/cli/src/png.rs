//! 8-bit image conversion for tensors in `[-1, 1]`.

use std::path::Path;

use anagram_core::tensor::{Dims, ImageTensor};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::CliError;

/// `round_half_even((v + 1) / 2 · 255)`, clamped to `0..=255`.
pub fn to_u8(v: f64) -> u8 {
    quantize((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0)
}

fn quantize(scaled: f64) -> u8 {
    scaled.round_ties_even().clamp(0.0, 255.0) as u8
}

pub fn from_u8(v: u8) -> f64 {
    v as f64 / 255.0 * 2.0 - 1.0
}

/// Interleaved 8-bit pixels for a 1- or 3-channel tensor.
pub fn to_pixels(t: &ImageTensor) -> Result<(Vec<u8>, ExtendedColorType), CliError> {
    let d = t.dims();
    let color = match d.channels {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(CliError::Config(format!("PNG output needs 1 or 3 channels, tensor has {c}"))),
    };
    let mut out = Vec::with_capacity(d.len());
    for y in 0..d.height {
        for x in 0..d.width {
            for c in 0..d.channels {
                out.push(to_u8(t.get(c, y, x)));
            }
        }
    }
    Ok((out, color))
}

pub fn encode_png(t: &ImageTensor) -> Result<Vec<u8>, CliError> {
    let (pixels, color) = to_pixels(t)?;
    let mut bytes = Vec::new();
    image::codecs::png::PngEncoder::new(&mut bytes)
        .write_image(&pixels, t.dims().width as u32, t.dims().height as u32, color)
        .map_err(|e| CliError::Config(format!("PNG encoding failed: {e}")))?;
    Ok(bytes)
}

pub fn write_png(path: &Path, t: &ImageTensor) -> Result<(), CliError> {
    std::fs::write(path, encode_png(t)?).map_err(|e| CliError::io(path, e))
}

/// Reads an 8-bit PNG as a 1- or 3-channel tensor in `[-1, 1]`.
pub fn read_png(path: &Path) -> Result<ImageTensor, CliError> {
    let img = image::open(path).map_err(|e| CliError::io(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img.color().channel_count() {
        1 | 2 => (1, img.to_luma8().into_raw()),
        _ => (3, img.to_rgb8().into_raw()),
    };
    let dims = Dims::new(channels, h, w);
    Ok(ImageTensor::from_fn(dims, |c, y, x| from_u8(raw[(y * w + x) * channels + c])))
}

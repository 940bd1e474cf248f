use std::path::Path;

use image::imageops::{self, FilterType};
use image::ImageFormat;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

/// Decodes a PNG into a `[size, size, 3]` tensor in `[0, 1]`: grayscale is
/// replicated across channels, other sizes are resized bilinearly.
pub fn decode_and_prepare(path: impl AsRef<Path>, size: usize) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(PNG_SIGNATURE) {
        return Err(Error::format(path, "not a PNG file"));
    }
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    prepare(&decoded.to_rgb8(), size)
}

pub fn prepare(rgb: &image::RgbImage, size: usize) -> Result<Tensor<f32>> {
    let side = u32::try_from(size).map_err(|_| Error::domain("image size too large"))?;
    if side == 0 {
        return Err(Error::domain("image size must be positive"));
    }
    let resized;
    let img = if rgb.dimensions() == (side, side) {
        rgb
    } else {
        resized = imageops::resize(rgb, side, side, FilterType::Triangle);
        &resized
    };
    let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
    Tensor::from_vec(&[size, size, 3], data)
}

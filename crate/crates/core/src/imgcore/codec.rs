use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use super::{BitMask, ImageBuffer, ImgError};

/// Decodes PNG or JPEG bytes into an RGB buffer.
///
/// Grayscale is expanded to RGB. Alpha is composited over black and dropped.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer, ImgError> {
    let format = image::guess_format(bytes)
        .map_err(|_| ImgError::UnsupportedFormat("unrecognized signature".into()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(ImgError::UnsupportedFormat(format!("{format:?}")));
    }
    let dynamic = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ImgError::Decode(e.to_string()))?;
    to_rgb_buffer(dynamic)
}

fn to_rgb_buffer(dynamic: DynamicImage) -> Result<ImageBuffer, ImgError> {
    let (width, height) = (dynamic.width(), dynamic.height());
    if dynamic.color().has_alpha() {
        let rgba = dynamic.into_rgba8();
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for px in rgba.pixels() {
            let a = px.0[3] as u32;
            for c in &px.0[..3] {
                // round-half-up of c * a / 255
                data.push(((2 * *c as u32 * a + 255) / 510) as u8);
            }
        }
        ImageBuffer::from_raw(width, height, data)
    } else {
        ImageBuffer::from_raw(width, height, dynamic.into_rgb8().into_raw())
    }
}

/// Lossless PNG encoding of an RGB buffer.
pub fn encode_png(image: &ImageBuffer) -> Result<Vec<u8>, ImgError> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(
            image.data(),
            image.width(),
            image.height(),
            ExtendedColorType::Rgb8,
        )
        .map_err(|e| ImgError::Encode(e.to_string()))?;
    Ok(out)
}

/// Masks persist as 8-bit grayscale PNG: 0 background, 255 segment.
pub fn encode_mask_png(mask: &BitMask) -> Result<Vec<u8>, ImgError> {
    let gray: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(&gray, mask.width(), mask.height(), ExtendedColorType::L8)
        .map_err(|e| ImgError::Encode(e.to_string()))?;
    Ok(out)
}

/// Decodes a mask PNG. Gray values of 128 and above count as set.
pub fn decode_mask(bytes: &[u8]) -> Result<BitMask, ImgError> {
    let format = image::guess_format(bytes)
        .map_err(|_| ImgError::UnsupportedFormat("unrecognized signature".into()))?;
    if format != ImageFormat::Png {
        return Err(ImgError::UnsupportedFormat(format!(
            "{format:?} (masks must be PNG)"
        )));
    }
    let dynamic = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ImgError::Decode(e.to_string()))?;
    let luma = dynamic.into_luma8();
    let (w, h) = luma.dimensions();
    BitMask::from_bits(w, h, luma.into_raw().into_iter().map(|v| v >= 128).collect())
}

pub fn read_image(path: &Path) -> Result<ImageBuffer, ImgError> {
    decode_image(&read_bytes(path)?)
}

pub fn read_mask(path: &Path) -> Result<BitMask, ImgError> {
    decode_mask(&read_bytes(path)?)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, ImgError> {
    std::fs::read(path).map_err(|source| ImgError::Io {
        path: path.display().to_string(),
        source,
    })
}

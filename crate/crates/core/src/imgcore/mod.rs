//! Image and mask raster primitives shared by every other module.
//!
//! [`ImageBuffer`] is an 8-bit RGB raster and [`BitMask`] a boolean grid of
//! the same shape. Both are plain values: operations take them by reference
//! and return new values.

mod codec;
pub mod geom;
mod morph;

pub use codec::{decode_image, decode_mask, encode_mask_png, encode_png, read_image, read_mask};
pub use morph::{boundary_ring, dilate, mask_bbox};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("failed to decode image: {0}")]
    Decode(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("failed to encode image: {0}")]
    Encode(String),
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("boundary ring is empty (mask covers the whole image)")]
    EmptyRing,
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("buffer length {actual} does not match {width}x{height} (expected {expected})")]
    BufferLength {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major 8-bit RGB raster.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    /// Creates a black image.
    pub fn new(width: u32, height: u32) -> Result<Self, ImgError> {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImgError> {
        check_dims(width, height)?;
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImgError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImgError::BufferLength {
                width,
                height,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, ImgError> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixel by linear index `y * width + x`.
    #[inline]
    pub fn pixel_at(&self, idx: usize) -> [u8; 3] {
        let i = idx * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel_at(&mut self, idx: usize, rgb: [u8; 3]) {
        let i = idx * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * 3
    }

    /// Number of pixels whose RGB value differs between `self` and `other`.
    pub fn count_changed(&self, other: &ImageBuffer) -> Result<usize, ImgError> {
        if self.dims() != other.dims() {
            return Err(ImgError::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(self
            .data
            .chunks_exact(3)
            .zip(other.data.chunks_exact(3))
            .filter(|(a, b)| a != b)
            .count())
    }

    /// Mask of pixels that differ between two equally sized images.
    pub fn diff_mask(&self, other: &ImageBuffer) -> Result<BitMask, ImgError> {
        if self.dims() != other.dims() {
            return Err(ImgError::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        let bits = self
            .data
            .chunks_exact(3)
            .zip(other.data.chunks_exact(3))
            .map(|(a, b)| a != b)
            .collect();
        BitMask::from_bits(self.width, self.height, bits)
    }
}

/// Row-major boolean grid annotating an image of the same size.
#[derive(Clone, PartialEq, Eq)]
pub struct BitMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BitMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Result<Self, ImgError> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        })
    }

    pub fn full(width: u32, height: u32) -> Result<Self, ImgError> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ImgError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(ImgError::BufferLength {
                width,
                height,
                expected,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, ImgError> {
        check_dims(width, height)?;
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Mask with the pixels of `rect` set.
    pub fn from_rect(width: u32, height: u32, rect: Rect) -> Result<Self, ImgError> {
        Self::from_fn(width, height, |x, y| rect.contains(x, y))
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    #[inline]
    pub fn get_at(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    #[inline]
    pub fn set_at(&mut self, idx: usize, value: bool) {
        self.bits[idx] = value;
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Coordinates of every set pixel in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn union_with(&mut self, other: &BitMask) -> Result<(), ImgError> {
        self.check_same(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// `self AND NOT other`.
    pub fn minus(&self, other: &BitMask) -> Result<BitMask, ImgError> {
        self.check_same(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a && !b)
            .collect();
        Ok(BitMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BitMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersects(&self, other: &BitMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    fn check_same(&self, other: &BitMask) -> Result<(), ImgError> {
        if self.dims() != other.dims() {
            return Err(ImgError::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned pixel rectangle `[x, x + w) × [y, y + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.w && y < self.y + self.h
    }

    /// Whether the rectangle lies inside an image of the given size.
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }
}

fn check_dims(width: u32, height: u32) -> Result<(), ImgError> {
    if width == 0 || height == 0 {
        return Err(ImgError::InvalidDimensions { width, height });
    }
    Ok(())
}

/// Rounds half-up and saturates to the 8-bit range.
#[inline]
pub fn round_to_u8(v: f64) -> u8 {
    let r = (v + 0.5).floor();
    if r <= 0.0 {
        0
    } else if r >= 255.0 {
        255
    } else {
        r as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dimensions() {
        assert!(matches!(
            ImageBuffer::new(0, 4),
            Err(ImgError::InvalidDimensions { .. })
        ));
        assert!(BitMask::new(3, 0).is_err());
    }

    #[test]
    fn from_raw_checks_length() {
        assert!(ImageBuffer::from_raw(2, 2, vec![0; 12]).is_ok());
        assert!(matches!(
            ImageBuffer::from_raw(2, 2, vec![0; 11]),
            Err(ImgError::BufferLength { expected: 12, .. })
        ));
    }

    #[test]
    fn round_half_up() {
        assert_eq!(round_to_u8(0.5), 1);
        assert_eq!(round_to_u8(1.49), 1);
        assert_eq!(round_to_u8(-3.0), 0);
        assert_eq!(round_to_u8(254.5), 255);
        assert_eq!(round_to_u8(900.0), 255);
    }

    #[test]
    fn mask_set_ops() {
        let a = BitMask::from_rect(6, 6, Rect::new(0, 0, 3, 3)).unwrap();
        let b = BitMask::from_rect(6, 6, Rect::new(2, 2, 3, 3)).unwrap();
        let d = a.minus(&b).unwrap();
        assert_eq!(d.count(), 8);
        assert!(d.is_subset_of(&a));
        assert!(!d.intersects(&b));
        let mut u = a.clone();
        u.union_with(&b).unwrap();
        assert_eq!(u.count(), 17);
    }
}

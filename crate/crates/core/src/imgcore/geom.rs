//! Geometric and color kernels: flips, crops, resampling.
//!
//! Sampling coordinates are in pixel-index space, pixel centers sit on
//! integers.

use super::{round_to_u8, BitMask, ImageBuffer, ImgError, Rect};

pub fn flip_horizontal(img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = img.dims();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(x, y, img.pixel(w - 1 - x, y));
        }
    }
    out
}

pub fn flip_vertical(img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = img.dims();
    let row = w as usize * 3;
    let mut out = img.clone();
    for y in 0..h as usize {
        let src = (h as usize - 1 - y) * row;
        out.data_mut()[y * row..(y + 1) * row].copy_from_slice(&img.data()[src..src + row]);
    }
    out
}

pub fn flip_mask_horizontal(mask: &BitMask) -> BitMask {
    let (w, h) = mask.dims();
    BitMask::from_fn(w, h, |x, y| mask.get(w - 1 - x, y)).expect("same dims")
}

pub fn flip_mask_vertical(mask: &BitMask) -> BitMask {
    let (w, h) = mask.dims();
    BitMask::from_fn(w, h, |x, y| mask.get(x, h - 1 - y)).expect("same dims")
}

pub fn crop(img: &ImageBuffer, rect: Rect) -> Result<ImageBuffer, ImgError> {
    if !rect.fits(img.width(), img.height()) {
        return Err(ImgError::InvalidDimensions {
            width: rect.w,
            height: rect.h,
        });
    }
    let src_row = img.width() as usize * 3;
    let mut data = Vec::with_capacity(rect.area() as usize * 3);
    for y in rect.y..rect.y + rect.h {
        let start = y as usize * src_row + rect.x as usize * 3;
        data.extend_from_slice(&img.data()[start..start + rect.w as usize * 3]);
    }
    ImageBuffer::from_raw(rect.w, rect.h, data)
}

pub fn crop_mask(mask: &BitMask, rect: Rect) -> Result<BitMask, ImgError> {
    if !rect.fits(mask.width(), mask.height()) {
        return Err(ImgError::InvalidDimensions {
            width: rect.w,
            height: rect.h,
        });
    }
    BitMask::from_fn(rect.w, rect.h, |x, y| mask.get(rect.x + x, rect.y + y))
}

/// Bilinear sample with clamp-to-edge.
pub fn sample_bilinear(img: &ImageBuffer, fx: f64, fy: f64) -> [f64; 3] {
    let (w, h) = img.dims();
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor() as u32;
    let y0 = fy.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let (p00, p10, p01, p11) = (
        img.pixel(x0, y0),
        img.pixel(x1, y0),
        img.pixel(x0, y1),
        img.pixel(x1, y1),
    );
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
        let bottom = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
        out[c] = top * (1.0 - ty) + bottom * ty;
    }
    out
}

/// Bilinear sample that only draws from pixels under `mask`, renormalizing
/// the weights. `None` when no masked neighbor contributes.
pub fn sample_bilinear_masked(
    img: &ImageBuffer,
    mask: &BitMask,
    fx: f64,
    fy: f64,
) -> Option<[f64; 3]> {
    let (w, h) = img.dims();
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let mut acc = [0.0; 3];
    let mut total = 0.0;
    for (dx, dy, wgt) in [
        (0.0, 0.0, (1.0 - tx) * (1.0 - ty)),
        (1.0, 0.0, tx * (1.0 - ty)),
        (0.0, 1.0, (1.0 - tx) * ty),
        (1.0, 1.0, tx * ty),
    ] {
        let sx = x0 + dx;
        let sy = y0 + dy;
        if wgt <= 0.0 || sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
            continue;
        }
        let (sx, sy) = (sx as u32, sy as u32);
        if !mask.get(sx, sy) {
            continue;
        }
        let p = img.pixel(sx, sy);
        for c in 0..3 {
            acc[c] += wgt * p[c] as f64;
        }
        total += wgt;
    }
    if total <= 0.0 {
        return None;
    }
    Some(acc.map(|v| v / total))
}

/// Nearest-neighbor mask lookup; out of frame reads as unset.
pub fn sample_mask_nearest(mask: &BitMask, fx: f64, fy: f64) -> bool {
    let x = (fx + 0.5).floor();
    let y = (fy + 0.5).floor();
    if x < 0.0 || y < 0.0 || x >= mask.width() as f64 || y >= mask.height() as f64 {
        return false;
    }
    mask.get(x as u32, y as u32)
}

/// Bilinear resize to exactly `width × height` (pixel-center aligned).
pub fn resize_bilinear(img: &ImageBuffer, width: u32, height: u32) -> Result<ImageBuffer, ImgError> {
    if img.dims() == (width, height) {
        return Ok(img.clone());
    }
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    ImageBuffer::from_fn(width, height, |x, y| {
        let fx = (x as f64 + 0.5) * sx - 0.5;
        let fy = (y as f64 + 0.5) * sy - 0.5;
        sample_bilinear(img, fx, fy).map(round_to_u8)
    })
}

/// Rotates about the image center on the same canvas; uncovered pixels are
/// black. Positive angles rotate counter-clockwise on screen.
pub fn rotate_same_canvas(img: &ImageBuffer, degrees: f64) -> ImageBuffer {
    if degrees == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    ImageBuffer::from_fn(w, h, |x, y| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        // inverse rotation (y axis points down)
        let sx = cos * dx - sin * dy + cx - 0.5;
        let sy = sin * dx + cos * dy + cy - 0.5;
        if sx < -0.5 || sy < -0.5 || sx > w as f64 - 0.5 || sy > h as f64 - 0.5 {
            [0, 0, 0]
        } else {
            sample_bilinear(img, sx, sy).map(round_to_u8)
        }
    })
    .expect("same dims")
}

/// Multiplies every channel by `factor`, rounding half-up and saturating.
pub fn scale_brightness(img: &ImageBuffer, factor: f64) -> ImageBuffer {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = round_to_u8(*v as f64 * factor);
    }
    out
}

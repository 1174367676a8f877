//! Segment extraction and per-segment transforms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::imgcore::geom::{
    crop, crop_mask, flip_horizontal, flip_mask_horizontal, flip_mask_vertical, flip_vertical,
    sample_bilinear_masked, sample_mask_nearest, scale_brightness,
};
use crate::imgcore::{mask_bbox, round_to_u8, BitMask, ImageBuffer, Rect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalKind {
    Hflip,
    Vflip,
    Rotate,
    Upscale,
    Downscale,
    Brightness,
}

impl LocalKind {
    pub const ALL: [LocalKind; 6] = [
        LocalKind::Hflip,
        LocalKind::Vflip,
        LocalKind::Rotate,
        LocalKind::Upscale,
        LocalKind::Downscale,
        LocalKind::Brightness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LocalKind::Hflip => "hflip",
            LocalKind::Vflip => "vflip",
            LocalKind::Rotate => "rotate",
            LocalKind::Upscale => "upscale",
            LocalKind::Downscale => "downscale",
            LocalKind::Brightness => "brightness",
        }
    }
}

impl std::fmt::Display for LocalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LocalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LocalKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown local transform {s:?}"))
    }
}

pub const DEFAULT_ANGLE_RANGE: (f64, f64) = (-45.0, 45.0);
pub const DEFAULT_UPSCALE_RANGE: (f64, f64) = (1.1, 1.5);
pub const DEFAULT_DOWNSCALE_RANGE: (f64, f64) = (0.5, 0.9);
pub const DEFAULT_BRIGHTNESS_RANGE: (f64, f64) = (0.8, 1.2);

/// A local transform with its sampling ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTransform {
    pub kind: LocalKind,
    pub angle_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub brightness_range: (f64, f64),
}

impl LocalTransform {
    pub fn of(kind: LocalKind) -> Self {
        Self {
            kind,
            angle_range: DEFAULT_ANGLE_RANGE,
            scale_range: match kind {
                LocalKind::Downscale => DEFAULT_DOWNSCALE_RANGE,
                _ => DEFAULT_UPSCALE_RANGE,
            },
            brightness_range: DEFAULT_BRIGHTNESS_RANGE,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        let bad = |what: &str| Err(AugmentError::InvalidParams(format!("{}: {what}", self.kind)));
        if !ordered(self.angle_range) || self.angle_range.0 < -180.0 || self.angle_range.1 > 180.0 {
            return bad("angle_range must be an ordered interval within [-180, 180]");
        }
        if !ordered(self.scale_range) || self.scale_range.0 <= 0.0 {
            return bad("scale_range must be a positive ordered interval");
        }
        if !ordered(self.brightness_range) || self.brightness_range.0 <= 0.0 {
            return bad("brightness_range must be a positive ordered interval");
        }
        Ok(())
    }

    /// Draws the concrete parameters of one application.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledTransform {
        let uniform = |rng: &mut R, (a, b): (f64, f64)| if a == b { a } else { rng.gen_range(a..=b) };
        match self.kind {
            LocalKind::Hflip => SampledTransform::Hflip,
            LocalKind::Vflip => SampledTransform::Vflip,
            LocalKind::Rotate => SampledTransform::Rotate {
                degrees: uniform(rng, self.angle_range),
            },
            LocalKind::Upscale => SampledTransform::Upscale {
                factor: uniform(rng, self.scale_range),
            },
            LocalKind::Downscale => SampledTransform::Downscale {
                factor: uniform(rng, self.scale_range),
            },
            LocalKind::Brightness => SampledTransform::Brightness {
                factor: uniform(rng, self.brightness_range),
            },
        }
    }
}

/// Concrete parameters of one applied transform, as recorded in sidecars.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampledTransform {
    Hflip,
    Vflip,
    Rotate { degrees: f64 },
    Upscale { factor: f64 },
    Downscale { factor: f64 },
    Brightness { factor: f64 },
}

/// A cropped segment: pixels and mask of the bounding box, and where the box
/// sits in the source image.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub pixels: ImageBuffer,
    pub mask: BitMask,
    pub origin: Rect,
}

pub fn extract_segment(image: &ImageBuffer, mask: &BitMask) -> Result<Patch, AugmentError> {
    if image.dims() != mask.dims() {
        return Err(AugmentError::DimensionMismatch {
            expected: image.dims(),
            actual: mask.dims(),
        });
    }
    let origin = mask_bbox(mask).map_err(|_| AugmentError::EmptyMask)?;
    Ok(Patch {
        pixels: crop(image, origin)?,
        mask: crop_mask(mask, origin)?,
        origin,
    })
}

/// Samples `t` and applies it to a patch. Returns the new pixels and mask and
/// the offset of the new patch's top-left corner relative to the old one.
pub fn transform_segment<R: Rng + ?Sized>(
    pixels: &ImageBuffer,
    mask: &BitMask,
    t: &LocalTransform,
    rng: &mut R,
) -> Result<(ImageBuffer, BitMask, (i64, i64)), AugmentError> {
    t.validate()?;
    apply_sampled(pixels, mask, &t.sample(rng))
}

pub fn apply_sampled(
    pixels: &ImageBuffer,
    mask: &BitMask,
    s: &SampledTransform,
) -> Result<(ImageBuffer, BitMask, (i64, i64)), AugmentError> {
    if pixels.dims() != mask.dims() {
        return Err(AugmentError::DimensionMismatch {
            expected: pixels.dims(),
            actual: mask.dims(),
        });
    }
    let out = match *s {
        SampledTransform::Hflip => (flip_horizontal(pixels), flip_mask_horizontal(mask), (0, 0)),
        SampledTransform::Vflip => (flip_vertical(pixels), flip_mask_vertical(mask), (0, 0)),
        SampledTransform::Brightness { factor } => (scale_brightness(pixels, factor), mask.clone(), (0, 0)),
        SampledTransform::Rotate { degrees } => rotate_patch(pixels, mask, degrees)?,
        SampledTransform::Upscale { factor } | SampledTransform::Downscale { factor } => {
            scale_patch(pixels, mask, factor)?
        }
    };
    if out.1.is_empty() {
        return Err(AugmentError::DegenerateResult);
    }
    Ok(out)
}

/// Smallest size `>= need` (and `>= base`) with the same parity as `base`, so
/// the patch can grow symmetrically about its center.
fn grown(base: u32, need: f64) -> u32 {
    let need = need.ceil().max(base as f64) as u32;
    need + ((need - base) & 1)
}

/// Rotation about the patch center onto a canvas large enough for the
/// rotated box. Pixels are resampled bilinearly from masked pixels only and
/// the mask by nearest neighbor, so the two stay co-registered.
fn rotate_patch(
    pixels: &ImageBuffer,
    mask: &BitMask,
    degrees: f64,
) -> Result<(ImageBuffer, BitMask, (i64, i64)), AugmentError> {
    if degrees == 0.0 {
        return Ok((pixels.clone(), mask.clone(), (0, 0)));
    }
    let (w, h) = pixels.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let need_w = w as f64 * cos.abs() + h as f64 * sin.abs();
    let need_h = w as f64 * sin.abs() + h as f64 * cos.abs();
    let (nw, nh) = (grown(w, need_w - 1e-9), grown(h, need_h - 1e-9));
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (ncx, ncy) = (nw as f64 / 2.0, nh as f64 / 2.0);
    let source = |x: u32, y: u32| {
        let dx = x as f64 + 0.5 - ncx;
        let dy = y as f64 + 0.5 - ncy;
        (cos * dx - sin * dy + cx - 0.5, sin * dx + cos * dy + cy - 0.5)
    };
    let new_mask = BitMask::from_fn(nw, nh, |x, y| {
        let (sx, sy) = source(x, y);
        sample_mask_nearest(mask, sx, sy)
    })?;
    let new_pixels = resample_under(pixels, mask, &new_mask, source)?;
    let off = (-(((nw - w) / 2) as i64), -(((nh - h) / 2) as i64));
    Ok((new_pixels, new_mask, off))
}

/// Resize by `factor`, keeping the mask centroid in place.
fn scale_patch(
    pixels: &ImageBuffer,
    mask: &BitMask,
    factor: f64,
) -> Result<(ImageBuffer, BitMask, (i64, i64)), AugmentError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(AugmentError::InvalidParams(format!("scale factor {factor}")));
    }
    let (w, h) = pixels.dims();
    let nw = ((w as f64 * factor).round() as u32).max(1);
    let nh = ((h as f64 * factor).round() as u32).max(1);
    let (sx, sy) = (nw as f64 / w as f64, nh as f64 / h as f64);
    let source = |x: u32, y: u32| ((x as f64 + 0.5) / sx - 0.5, (y as f64 + 0.5) / sy - 0.5);
    let new_mask = BitMask::from_fn(nw, nh, |x, y| {
        let (fx, fy) = source(x, y);
        sample_mask_nearest(mask, fx, fy)
    })?;
    if new_mask.is_empty() {
        return Err(AugmentError::DegenerateResult);
    }
    let new_pixels = resample_under(pixels, mask, &new_mask, source)?;
    let (cx, cy) = centroid(mask);
    let (ncx, ncy) = centroid(&new_mask);
    Ok((new_pixels, new_mask, ((cx - ncx).round() as i64, (cy - ncy).round() as i64)))
}

fn resample_under(
    pixels: &ImageBuffer,
    mask: &BitMask,
    new_mask: &BitMask,
    source: impl Fn(u32, u32) -> (f64, f64),
) -> Result<ImageBuffer, AugmentError> {
    Ok(ImageBuffer::from_fn(new_mask.width(), new_mask.height(), |x, y| {
        if !new_mask.get(x, y) {
            return [0, 0, 0];
        }
        let (fx, fy) = source(x, y);
        match sample_bilinear_masked(pixels, mask, fx, fy) {
            Some(v) => v.map(round_to_u8),
            None => {
                let nx = ((fx + 0.5).floor().max(0.0) as u32).min(pixels.width() - 1);
                let ny = ((fy + 0.5).floor().max(0.0) as u32).min(pixels.height() - 1);
                pixels.pixel(nx, ny)
            }
        }
    })?)
}

/// Mean pixel-center position of the set bits.
fn centroid(mask: &BitMask) -> (f64, f64) {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0.0;
    for (x, y) in mask.iter_set() {
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
        n += 1.0;
    }
    (sx / n, sy / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn l_shape() -> (ImageBuffer, BitMask) {
        let img = ImageBuffer::from_fn(20, 16, |x, y| [(x * 11) as u8, (y * 13) as u8, 77]).unwrap();
        let mask = BitMask::from_fn(20, 16, |x, y| (3..6).contains(&x) && (4..12).contains(&y) || (3..10).contains(&x) && (9..12).contains(&y))
            .unwrap();
        (img, mask)
    }

    #[test]
    fn extract_full_and_single() {
        let img = ImageBuffer::filled(7, 5, [1, 2, 3]).unwrap();
        let p = extract_segment(&img, &BitMask::full(7, 5).unwrap()).unwrap();
        assert_eq!(p.origin, Rect::new(0, 0, 7, 5));
        assert_eq!(p.pixels, img);
        let mut m = BitMask::new(7, 5).unwrap();
        m.set(4, 2, true);
        let p = extract_segment(&img, &m).unwrap();
        assert_eq!(p.pixels.dims(), (1, 1));
        assert_eq!(p.origin, Rect::new(4, 2, 1, 1));
        assert!(matches!(
            extract_segment(&img, &BitMask::new(7, 5).unwrap()),
            Err(AugmentError::EmptyMask)
        ));
    }

    #[test]
    fn extract_l_shape_matches_oracle() {
        let (img, mask) = l_shape();
        let p = extract_segment(&img, &mask).unwrap();
        assert_eq!(p.origin, Rect::new(3, 4, 7, 8));
        for y in 0..8 {
            for x in 0..7 {
                assert_eq!(p.mask.get(x, y), mask.get(x + 3, y + 4));
                assert_eq!(p.pixels.pixel(x, y), img.pixel(x + 3, y + 4));
            }
        }
    }

    #[test]
    fn flips_are_involutions() {
        let (img, mask) = l_shape();
        let p = extract_segment(&img, &mask).unwrap();
        for s in [SampledTransform::Hflip, SampledTransform::Vflip] {
            let (a, am, off) = apply_sampled(&p.pixels, &p.mask, &s).unwrap();
            assert_eq!(off, (0, 0));
            assert_ne!(am, p.mask);
            let (b, bm, _) = apply_sampled(&a, &am, &s).unwrap();
            assert_eq!(b, p.pixels);
            assert_eq!(bm, p.mask);
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let (img, mask) = l_shape();
        let p = extract_segment(&img, &mask).unwrap();
        let t = LocalTransform {
            angle_range: (0.0, 0.0),
            ..LocalTransform::of(LocalKind::Rotate)
        };
        let (a, am, off) = transform_segment(&p.pixels, &p.mask, &t, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((a, am, off), (p.pixels, p.mask, (0, 0)));
    }

    #[test]
    fn rotation_by_90_is_exact_on_square_patch() {
        let img = ImageBuffer::from_fn(4, 4, |x, y| [(x * 60) as u8, (y * 60) as u8, 0]).unwrap();
        let mask = BitMask::from_fn(4, 4, |x, y| x == 0 || y == 3).unwrap();
        let (r, rm, off) = apply_sampled(&img, &mask, &SampledTransform::Rotate { degrees: 90.0 }).unwrap();
        assert_eq!(r.dims(), (4, 4));
        assert_eq!(off, (0, 0));
        // counter-clockwise on screen: (x, y) -> (y, w - 1 - x)
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(rm.get(y, 3 - x), mask.get(x, y), "({x},{y})");
                if mask.get(x, y) {
                    assert_eq!(r.pixel(y, 3 - x), img.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn rotation_canvas_grows_symmetrically() {
        let img = ImageBuffer::filled(10, 6, [200, 10, 10]).unwrap();
        let mask = BitMask::full(10, 6).unwrap();
        let (r, rm, off) = apply_sampled(&img, &mask, &SampledTransform::Rotate { degrees: 30.0 }).unwrap();
        let (nw, nh) = r.dims();
        assert!(nw >= 10 && nh >= 6);
        assert_eq!((nw - 10) % 2, 0);
        assert_eq!((nh - 6) % 2, 0);
        assert_eq!(off, (-((nw as i64 - 10) / 2), -((nh as i64 - 6) / 2)));
        // area roughly preserved
        let ratio = rm.count() as f64 / 60.0;
        assert!((0.8..1.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn upscale_area_matches_square_law() {
        let img = ImageBuffer::filled(10, 10, [5, 6, 7]).unwrap();
        let mask = BitMask::full(10, 10).unwrap();
        let (p, m, _) = apply_sampled(&img, &mask, &SampledTransform::Upscale { factor: 1.5 }).unwrap();
        let expected = 1.5f64 * 1.5 * 100.0;
        assert!((m.count() as f64 - expected).abs() <= 0.1 * expected);
        assert_eq!(p.dims(), (15, 15));
        // rectangle inside a larger patch
        let mask = BitMask::from_fn(10, 10, |x, y| (2..8).contains(&x) && (3..7).contains(&y)).unwrap();
        // per-axis oracle: output index i reads source floor((i + 0.5) * n / n')
        let hits = |n: u32, lo: u32, hi: u32, f: f64| {
            let m = ((n as f64 * f).round() as u32).max(1);
            (0..m)
                .filter(|&i| {
                    let src = ((i as f64 + 0.5) * n as f64 / m as f64).floor() as u32;
                    (lo..hi).contains(&src)
                })
                .count()
        };
        for f in [1.1, 1.3, 1.5, 0.5, 0.7, 0.9] {
            let (_, m, _) = apply_sampled(&img, &mask, &SampledTransform::Upscale { factor: f }).unwrap();
            assert_eq!(m.count(), hits(10, 2, 8, f) * hits(10, 3, 7, f), "{f}");
        }
    }

    #[test]
    fn scaling_keeps_centroid() {
        let (img, mask) = l_shape();
        let p = extract_segment(&img, &mask).unwrap();
        let (cx, cy) = centroid(&p.mask);
        for f in [0.6, 1.4] {
            let (_, m, (dx, dy)) = apply_sampled(&p.pixels, &p.mask, &SampledTransform::Upscale { factor: f }).unwrap();
            let (ncx, ncy) = centroid(&m);
            assert!((ncx + dx as f64 - cx).abs() <= 0.5 + 1e-9);
            assert!((ncy + dy as f64 - cy).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn downscale_of_thin_mask_can_degenerate() {
        let img = ImageBuffer::filled(9, 9, [0, 0, 0]).unwrap();
        let mut mask = BitMask::new(9, 9).unwrap();
        mask.set(1, 1, true);
        let err = apply_sampled(&img, &mask, &SampledTransform::Downscale { factor: 0.5 }).unwrap_err();
        assert!(matches!(err, AugmentError::DegenerateResult));
    }

    #[test]
    fn pixels_follow_mask_after_transform() {
        let (img, mask) = l_shape();
        let p = extract_segment(&img, &mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // resampled kinds leave nothing outside the new mask
        for kind in [LocalKind::Rotate, LocalKind::Upscale, LocalKind::Downscale] {
            for _ in 0..10 {
                let (px, m, _) = transform_segment(&p.pixels, &p.mask, &LocalTransform::of(kind), &mut rng).unwrap();
                assert_eq!(px.dims(), m.dims());
                for (idx, &set) in m.bits().iter().enumerate() {
                    if !set {
                        assert_eq!(px.pixel_at(idx), [0, 0, 0], "{kind}");
                    }
                }
            }
        }
    }

    #[test]
    fn brightness_keeps_mask() {
        let (img, mask) = l_shape();
        let p = extract_segment(&img, &mask).unwrap();
        let (px, m, off) = apply_sampled(&p.pixels, &p.mask, &SampledTransform::Brightness { factor: 1.2 }).unwrap();
        assert_eq!(m, p.mask);
        assert_eq!(off, (0, 0));
        assert_eq!(px.pixel(0, 0)[2], round_to_u8(77.0 * 1.2));
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        let mut t = LocalTransform::of(LocalKind::Rotate);
        t.angle_range = (-200.0, 0.0);
        assert!(t.validate().is_err());
        let mut t = LocalTransform::of(LocalKind::Upscale);
        t.scale_range = (0.0, 1.0);
        assert!(t.validate().is_err());
        let mut t = LocalTransform::of(LocalKind::Brightness);
        t.brightness_range = (1.2, 0.8);
        assert!(t.validate().is_err());
        assert!(LocalTransform::of(LocalKind::Downscale).validate().is_ok());
    }
}

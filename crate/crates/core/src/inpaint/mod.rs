//! Region removal and background fill.
//!
//! Four fills are available: boundary statistics (mean or median color of
//! the band around the mask), Telea fast marching, Navier–Stokes vorticity
//! transport, and externally precomputed backgrounds read from a cache.
//! Every method leaves pixels outside `dilate(mask, dilation_radius)`
//! untouched.

mod ns;
mod telea;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::{self, boundary_ring, dilate, BitMask, ImageBuffer, ImgError};

pub use ns::{inpaint_ns, inpaint_ns_traced};
pub use telea::{inpaint_telea, inpaint_telea_traced, FillStep};

#[derive(Debug, Error)]
pub enum InpaintError {
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("boundary ring is empty (mask covers the whole image)")]
    EmptyRing,
    #[error("inpainting produced a non-finite value")]
    NonFinite,
    #[error("missing precomputed background {0}")]
    MissingArtifact(PathBuf),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("invalid inpainting parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Image(ImgError),
}

impl From<ImgError> for InpaintError {
    fn from(e: ImgError) -> Self {
        match e {
            ImgError::EmptyMask => InpaintError::EmptyMask,
            ImgError::EmptyRing => InpaintError::EmptyRing,
            ImgError::DimensionMismatch { expected, actual } => {
                InpaintError::DimensionMismatch { expected, actual }
            }
            other => InpaintError::Image(other),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InpaintKind {
    Mean,
    #[default]
    Median,
    Telea,
    Ns,
    #[serde(alias = "external")]
    ExternalPrecomputed,
}

impl InpaintKind {
    pub const ALL: [InpaintKind; 5] = [
        InpaintKind::Mean,
        InpaintKind::Median,
        InpaintKind::Telea,
        InpaintKind::Ns,
        InpaintKind::ExternalPrecomputed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InpaintKind::Mean => "mean",
            InpaintKind::Median => "median",
            InpaintKind::Telea => "telea",
            InpaintKind::Ns => "ns",
            InpaintKind::ExternalPrecomputed => "external_precomputed",
        }
    }
}

impl std::str::FromStr for InpaintKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            "telea" => Ok(Self::Telea),
            "ns" => Ok(Self::Ns),
            "external" | "external_precomputed" | "lama" => Ok(Self::ExternalPrecomputed),
            other => Err(format!("unknown inpainting method '{other}'")),
        }
    }
}

impl std::fmt::Display for InpaintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryStat {
    Mean,
    Median,
}

/// Inpainting method and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintMethod {
    pub kind: InpaintKind,
    /// `None` selects [`default_dilation_radius`] for the image size.
    pub dilation_radius: Option<u32>,
    pub telea_radius: u32,
    pub ns_iterations: u32,
    pub ns_dt: f64,
}

impl Default for InpaintMethod {
    fn default() -> Self {
        Self {
            kind: InpaintKind::Median,
            dilation_radius: None,
            telea_radius: 5,
            ns_iterations: 100,
            ns_dt: 0.1,
        }
    }
}

impl InpaintMethod {
    pub fn of(kind: InpaintKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), InpaintError> {
        if self.dilation_radius == Some(0) {
            return Err(InpaintError::InvalidParams("dilation_radius must be >= 1".into()));
        }
        if self.telea_radius == 0 {
            return Err(InpaintError::InvalidParams("telea_radius must be >= 1".into()));
        }
        if self.ns_iterations == 0 {
            return Err(InpaintError::InvalidParams("ns_iterations must be >= 1".into()));
        }
        if !(self.ns_dt > 0.0 && self.ns_dt <= 1.0) {
            return Err(InpaintError::InvalidParams("ns_dt must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn dilation_for(&self, width: u32, height: u32) -> u32 {
        self.dilation_radius
            .unwrap_or_else(|| default_dilation_radius(width, height))
    }
}

/// `max(3, ceil(0.02 * min(width, height)))`.
pub fn default_dilation_radius(width: u32, height: u32) -> u32 {
    let short = width.min(height);
    (short * 2).div_ceil(100).max(3)
}

/// Pixels a method may modify for `mask`: the mask dilated by the method's
/// radius.
pub fn affected_region(mask: &BitMask, method: &InpaintMethod) -> BitMask {
    dilate(mask, method.dilation_for(mask.width(), mask.height()))
}

/// Fills the region under `mask` with `method`.
///
/// `background` must be supplied for [`InpaintKind::ExternalPrecomputed`]
/// and is ignored otherwise.
pub fn inpaint(
    image: &ImageBuffer,
    mask: &BitMask,
    method: &InpaintMethod,
    background: Option<&ImageBuffer>,
) -> Result<ImageBuffer, InpaintError> {
    method.validate()?;
    check_dims(image, mask)?;
    let radius = method.dilation_for(image.width(), image.height());
    match method.kind {
        InpaintKind::Mean => inpaint_boundary_stat(image, mask, BoundaryStat::Mean, radius),
        InpaintKind::Median => inpaint_boundary_stat(image, mask, BoundaryStat::Median, radius),
        InpaintKind::Telea => inpaint_telea(image, mask, method),
        InpaintKind::Ns => inpaint_ns(image, mask, method),
        InpaintKind::ExternalPrecomputed => {
            let bg = background.ok_or_else(|| {
                InpaintError::MissingArtifact(PathBuf::from("<no precomputed background supplied>"))
            })?;
            composite_precomputed(image, mask, bg, radius)
        }
    }
}

fn check_dims(image: &ImageBuffer, mask: &BitMask) -> Result<(), InpaintError> {
    if image.dims() != mask.dims() {
        return Err(InpaintError::DimensionMismatch {
            expected: image.dims(),
            actual: mask.dims(),
        });
    }
    Ok(())
}

/// Replaces the original mask with the per-channel mean (rounded half-up) or
/// median of the boundary ring.
pub fn inpaint_boundary_stat(
    image: &ImageBuffer,
    mask: &BitMask,
    stat: BoundaryStat,
    dilation_radius: u32,
) -> Result<ImageBuffer, InpaintError> {
    check_dims(image, mask)?;
    let ring = boundary_ring(mask, dilation_radius)?;
    let fill = ring_statistic(image, &ring, stat);
    let mut out = image.clone();
    for (idx, &set) in mask.bits().iter().enumerate() {
        if set {
            out.set_pixel_at(idx, fill);
        }
    }
    Ok(out)
}

/// Per-channel statistic over the pixels of `ring` (which must be non-empty).
pub(crate) fn ring_statistic(image: &ImageBuffer, ring: &BitMask, stat: BoundaryStat) -> [u8; 3] {
    let mut hist = [[0u64; 256]; 3];
    let mut n = 0u64;
    for (idx, &set) in ring.bits().iter().enumerate() {
        if set {
            let p = image.pixel_at(idx);
            for c in 0..3 {
                hist[c][p[c] as usize] += 1;
            }
            n += 1;
        }
    }
    debug_assert!(n > 0);
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = match stat {
            BoundaryStat::Mean => {
                let sum: u64 = hist[c].iter().enumerate().map(|(v, &k)| v as u64 * k).sum();
                ((2 * sum + n) / (2 * n)) as u8
            }
            BoundaryStat::Median => {
                // even counts average the two middle values, rounding half-up
                let lo = nth_from_hist(&hist[c], (n - 1) / 2);
                let hi = nth_from_hist(&hist[c], n / 2);
                (lo as u32 + hi as u32).div_ceil(2) as u8
            }
        };
    }
    out
}

fn nth_from_hist(hist: &[u64; 256], rank: u64) -> u8 {
    let mut seen = 0;
    for (v, &k) in hist.iter().enumerate() {
        seen += k;
        if seen > rank {
            return v as u8;
        }
    }
    255
}

pub fn background_file_name(image_id: &str) -> String {
    format!("{image_id}.inpainted.png")
}

/// Reads `<image_id>.inpainted.png` from the background cache.
pub fn load_precomputed_background(
    image_id: &str,
    cache_dir: &Path,
    expected: (u32, u32),
) -> Result<ImageBuffer, InpaintError> {
    let path = cache_dir.join(background_file_name(image_id));
    if !path.is_file() {
        return Err(InpaintError::MissingArtifact(path));
    }
    let bg = imgcore::read_image(&path)?;
    if bg.dims() != expected {
        return Err(InpaintError::DimensionMismatch {
            expected,
            actual: bg.dims(),
        });
    }
    Ok(bg)
}

/// Takes the dilated-mask pixels from an externally inpainted background.
pub fn composite_precomputed(
    image: &ImageBuffer,
    mask: &BitMask,
    background: &ImageBuffer,
    dilation_radius: u32,
) -> Result<ImageBuffer, InpaintError> {
    check_dims(image, mask)?;
    if background.dims() != image.dims() {
        return Err(InpaintError::DimensionMismatch {
            expected: image.dims(),
            actual: background.dims(),
        });
    }
    if mask.is_empty() {
        return Err(InpaintError::EmptyMask);
    }
    let region = dilate(mask, dilation_radius);
    let mut out = image.clone();
    for (idx, &set) in region.bits().iter().enumerate() {
        if set {
            out.set_pixel_at(idx, background.pixel_at(idx));
        }
    }
    Ok(out)
}

/// Dilated hole for the propagating methods; errors when nothing outside it
/// is known.
pub(crate) fn hole_for(mask: &BitMask, method: &InpaintMethod) -> Result<BitMask, InpaintError> {
    if mask.is_empty() {
        return Err(InpaintError::EmptyMask);
    }
    let hole = affected_region(mask, method);
    if hole.count() == hole.bits().len() {
        return Err(InpaintError::EmptyRing);
    }
    Ok(hole)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::Rect;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: u32, h: u32) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap()
    }

    /// Sort-based oracle over the ring pixels.
    fn oracle_stat(img: &ImageBuffer, ring: &BitMask, stat: BoundaryStat) -> [f64; 3] {
        let mut out = [0.0; 3];
        for c in 0..3 {
            let mut v: Vec<f64> = ring
                .iter_set()
                .map(|(x, y)| img.pixel(x, y)[c] as f64)
                .collect();
            v.sort_by(f64::total_cmp);
            out[c] = match stat {
                BoundaryStat::Mean => v.iter().sum::<f64>() / v.len() as f64,
                BoundaryStat::Median => {
                    let n = v.len();
                    if n % 2 == 1 {
                        v[n / 2]
                    } else {
                        (v[n / 2 - 1] + v[n / 2]) / 2.0
                    }
                }
            };
        }
        out
    }

    #[test]
    fn default_radius() {
        assert_eq!(default_dilation_radius(64, 64), 3);
        assert_eq!(default_dilation_radius(224, 300), 5);
        assert_eq!(default_dilation_radius(512, 512), 11);
        assert_eq!(default_dilation_radius(1000, 150), 3);
    }

    #[test]
    fn constant_image_fixed_point_for_stats() {
        let img = ImageBuffer::filled(20, 20, [10, 20, 30]).unwrap();
        let mask = BitMask::from_rect(20, 20, Rect::new(5, 6, 4, 7)).unwrap();
        for stat in [BoundaryStat::Mean, BoundaryStat::Median] {
            assert_eq!(inpaint_boundary_stat(&img, &mask, stat, 3).unwrap(), img);
        }
    }

    #[test]
    fn odd_median_picks_middle() {
        // 4x1 strip, mask at x=0, radius 3: ring is x=1..=3 with red {0, 0, 255}
        let mut img = ImageBuffer::filled(4, 1, [0, 0, 0]).unwrap();
        img.set_pixel(3, 0, [255, 0, 0]);
        let mask = BitMask::from_fn(4, 1, |x, _| x == 0).unwrap();
        assert_eq!(boundary_ring(&mask, 3).unwrap().count(), 3);
        let out = inpaint_boundary_stat(&img, &mask, BoundaryStat::Median, 3).unwrap();
        assert_eq!(out.pixel(0, 0)[0], 0);
    }

    #[test]
    fn even_median_averages_middle_pair() {
        // ring of the center pixel at radius 1: red {0, 0, 255, 255}
        let mut img = ImageBuffer::filled(9, 9, [50, 50, 50]).unwrap();
        img.set_pixel(3, 4, [0, 0, 0]);
        img.set_pixel(5, 4, [0, 0, 0]);
        img.set_pixel(4, 3, [255, 0, 0]);
        img.set_pixel(4, 5, [255, 0, 0]);
        let center = BitMask::from_fn(9, 9, |x, y| x == 4 && y == 4).unwrap();
        let out = inpaint_boundary_stat(&img, &center, BoundaryStat::Median, 1).unwrap();
        assert_eq!(out.pixel(4, 4)[0], 128);
    }

    #[test]
    fn stats_match_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let img = random_image(&mut rng, 32, 32);
            let x = rng.gen_range(0..26);
            let y = rng.gen_range(0..26);
            let mask = BitMask::from_rect(32, 32, Rect::new(x, y, 6, 6)).unwrap();
            let ring = boundary_ring(&mask, 3).unwrap();
            for stat in [BoundaryStat::Mean, BoundaryStat::Median] {
                let out = inpaint_boundary_stat(&img, &mask, stat, 3).unwrap();
                let want = oracle_stat(&img, &ring, stat);
                let got = out.pixel(x, y);
                for c in 0..3 {
                    assert!((got[c] as f64 - want[c]).abs() <= 1.0, "{stat:?} {got:?} {want:?}");
                }
                // everything outside the original mask unchanged
                for (idx, &m) in mask.bits().iter().enumerate() {
                    if !m {
                        assert_eq!(out.pixel_at(idx), img.pixel_at(idx));
                    } else {
                        assert_eq!(out.pixel_at(idx), got);
                    }
                }
            }
        }
    }

    #[test]
    fn full_mask_has_no_ring() {
        let img = ImageBuffer::filled(6, 6, [1, 2, 3]).unwrap();
        let mask = BitMask::full(6, 6).unwrap();
        let bg = ImageBuffer::filled(6, 6, [7, 7, 7]).unwrap();
        for kind in InpaintKind::ALL {
            let res = inpaint(&img, &mask, &InpaintMethod::of(kind), Some(&bg));
            if kind == InpaintKind::ExternalPrecomputed {
                // a precomputed background needs no ring
                assert_eq!(res.unwrap(), bg);
            } else {
                let err = res.unwrap_err();
                assert!(matches!(err, InpaintError::EmptyRing), "{kind}: {err}");
            }
        }
    }

    #[test]
    fn parameter_validation() {
        let mut m = InpaintMethod::default();
        assert!(m.validate().is_ok());
        m.ns_dt = 0.0;
        assert!(m.validate().is_err());
        m.ns_dt = 1.0;
        m.telea_radius = 0;
        assert!(m.validate().is_err());
        m.telea_radius = 5;
        m.dilation_radius = Some(0);
        assert!(m.validate().is_err());
    }

    #[test]
    fn precomputed_background_cache() {
        let dir = tempfile::tempdir().unwrap();
        let bg = ImageBuffer::filled(8, 6, [1, 2, 3]).unwrap();
        std::fs::write(
            dir.path().join(background_file_name("a")),
            imgcore::encode_png(&bg).unwrap(),
        )
        .unwrap();
        assert_eq!(load_precomputed_background("a", dir.path(), (8, 6)).unwrap(), bg);
        assert!(matches!(
            load_precomputed_background("b", dir.path(), (8, 6)),
            Err(InpaintError::MissingArtifact(_))
        ));
        assert!(matches!(
            load_precomputed_background("a", dir.path(), (6, 8)),
            Err(InpaintError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn precomputed_only_touches_dilated_mask() {
        let img = ImageBuffer::filled(30, 30, [200, 200, 200]).unwrap();
        let bg = ImageBuffer::filled(30, 30, [5, 5, 5]).unwrap();
        let mask = BitMask::from_rect(30, 30, Rect::new(10, 10, 4, 4)).unwrap();
        let method = InpaintMethod::of(InpaintKind::ExternalPrecomputed);
        let out = inpaint(&img, &mask, &method, Some(&bg)).unwrap();
        let region = affected_region(&mask, &method);
        for idx in 0..900 {
            let want = if region.get_at(idx) { [5; 3] } else { [200; 3] };
            assert_eq!(out.pixel_at(idx), want);
        }
        assert!(matches!(
            inpaint(&img, &mask, &method, None),
            Err(InpaintError::MissingArtifact(_))
        ));
    }
}

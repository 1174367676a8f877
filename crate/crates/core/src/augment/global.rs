//! Whole-image baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AugmentError, AugmentOutcome, AugmentParams};
use crate::imgcore::geom::{crop, flip_horizontal, flip_vertical, resize_bilinear, rotate_same_canvas};
use crate::imgcore::{ImageBuffer, Rect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalKind {
    ResizeCenterCrop,
    RandomCrop,
    RandomResizedCrop,
    Hflip,
    Vflip,
    Rotate,
}

impl GlobalKind {
    pub const ALL: [GlobalKind; 6] = [
        GlobalKind::ResizeCenterCrop,
        GlobalKind::RandomCrop,
        GlobalKind::RandomResizedCrop,
        GlobalKind::Hflip,
        GlobalKind::Vflip,
        GlobalKind::Rotate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GlobalKind::ResizeCenterCrop => "resize_center_crop",
            GlobalKind::RandomCrop => "random_crop",
            GlobalKind::RandomResizedCrop => "random_resized_crop",
            GlobalKind::Hflip => "hflip",
            GlobalKind::Vflip => "vflip",
            GlobalKind::Rotate => "rotate",
        }
    }
}

impl std::fmt::Display for GlobalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GlobalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GlobalKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown global transform {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalSettings {
    /// Output side for the crop variants.
    pub target: u32,
    pub angle_range: (f64, f64),
    /// Area fraction range of random_resized_crop.
    pub scale_range: (f64, f64),
    /// Aspect ratio range of random_resized_crop.
    pub ratio_range: (f64, f64),
}

impl Default for GlobalSettings {
    fn default() -> Self {
        Self {
            target: 224,
            angle_range: (-45.0, 45.0),
            scale_range: (0.08, 1.0),
            ratio_range: (3.0 / 4.0, 4.0 / 3.0),
        }
    }
}

impl GlobalSettings {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if self.target == 0 {
            return Err(AugmentError::InvalidParams("target must be at least 1".into()));
        }
        if !ordered(self.angle_range) || self.angle_range.0 < -180.0 || self.angle_range.1 > 180.0 {
            return Err(AugmentError::InvalidParams("angle_range must lie within [-180, 180]".into()));
        }
        if !ordered(self.scale_range) || self.scale_range.0 <= 0.0 || self.scale_range.1 > 1.0 {
            return Err(AugmentError::InvalidParams("scale_range must lie within (0, 1]".into()));
        }
        if !ordered(self.ratio_range) || self.ratio_range.0 <= 0.0 {
            return Err(AugmentError::InvalidParams("ratio_range must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalTransform {
    pub kind: GlobalKind,
    pub settings: GlobalSettings,
}

impl GlobalTransform {
    pub fn of(kind: GlobalKind) -> Self {
        Self {
            kind,
            settings: GlobalSettings::default(),
        }
    }
}

/// Sampled values of one global transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalRecord {
    pub kind: GlobalKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resized_to: Option<(u32, u32)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop: Option<Rect>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degrees: Option<f64>,
}

/// Size with the shortest side equal to `target`, aspect ratio kept.
pub fn shortest_side_dims(width: u32, height: u32, target: u32) -> (u32, u32) {
    let short = width.min(height) as f64;
    let scale = |n: u32| ((n as f64 * target as f64 / short).round() as u32).max(target);
    if width <= height {
        (target, scale(height))
    } else {
        (scale(width), target)
    }
}

pub fn resize_shortest_side(image: &ImageBuffer, target: u32) -> Result<ImageBuffer, AugmentError> {
    let (w, h) = shortest_side_dims(image.width(), image.height(), target);
    Ok(resize_bilinear(image, w, h)?)
}

fn square_crop(image: &ImageBuffer, x: u32, y: u32, target: u32) -> Result<ImageBuffer, AugmentError> {
    let rect = Rect::new(x, y, target, target);
    if !rect.fits(image.width(), image.height()) {
        return Err(AugmentError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            target,
        });
    }
    Ok(crop(image, rect)?)
}

pub fn global_augment<R: Rng + ?Sized>(
    image: &ImageBuffer,
    t: &GlobalTransform,
    rng: &mut R,
) -> Result<AugmentOutcome, AugmentError> {
    let s = &t.settings;
    s.validate()?;
    let mut rec = GlobalRecord {
        kind: t.kind,
        resized_to: None,
        crop: None,
        degrees: None,
    };
    let out = match t.kind {
        GlobalKind::ResizeCenterCrop | GlobalKind::RandomCrop => {
            let resized = resize_shortest_side(image, s.target)?;
            let (w, h) = resized.dims();
            rec.resized_to = Some((w, h));
            let (mx, my) = (w.saturating_sub(s.target), h.saturating_sub(s.target));
            let (x, y) = if t.kind == GlobalKind::ResizeCenterCrop {
                (mx / 2, my / 2)
            } else {
                (rng.gen_range(0..=mx), rng.gen_range(0..=my))
            };
            rec.crop = Some(Rect::new(x, y, s.target, s.target));
            square_crop(&resized, x, y, s.target)?
        }
        GlobalKind::RandomResizedCrop => {
            let rect = resized_crop_rect(image.width(), image.height(), s, rng);
            rec.crop = Some(rect);
            rec.resized_to = Some((s.target, s.target));
            resize_bilinear(&crop(image, rect)?, s.target, s.target)?
        }
        GlobalKind::Hflip => flip_horizontal(image),
        GlobalKind::Vflip => flip_vertical(image),
        GlobalKind::Rotate => {
            let (a, b) = s.angle_range;
            let deg = if a == b { a } else { rng.gen_range(a..=b) };
            rec.degrees = Some(deg);
            rotate_same_canvas(image, deg)
        }
    };
    Ok(AugmentOutcome {
        image: out,
        params: AugmentParams::Global(rec),
        allowed: None,
    })
}

/// Crop of random area fraction and aspect ratio taken from the original
/// image; ten attempts, then a central crop clamped to the ratio range.
pub fn resized_crop_rect<R: Rng + ?Sized>(width: u32, height: u32, s: &GlobalSettings, rng: &mut R) -> Rect {
    let area = width as f64 * height as f64;
    let (lr0, lr1) = (s.ratio_range.0.ln(), s.ratio_range.1.ln());
    for _ in 0..10 {
        let target_area = area * uniform(rng, s.scale_range);
        let ratio = uniform(rng, (lr0, lr1)).exp();
        let w = (target_area * ratio).sqrt().round() as u32;
        let h = (target_area / ratio).sqrt().round() as u32;
        if w > 0 && h > 0 && w <= width && h <= height {
            let x = rng.gen_range(0..=width - w);
            let y = rng.gen_range(0..=height - h);
            return Rect::new(x, y, w, h);
        }
    }
    let in_ratio = width as f64 / height as f64;
    let (w, h) = if in_ratio < s.ratio_range.0 {
        (width, ((width as f64 / s.ratio_range.0).round() as u32).clamp(1, height))
    } else if in_ratio > s.ratio_range.1 {
        (((height as f64 * s.ratio_range.1).round() as u32).clamp(1, width), height)
    } else {
        (width, height)
    };
    Rect::new((width - w) / 2, (height - h) / 2, w, h)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.gen_range(a..=b)
    }
}

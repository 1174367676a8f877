use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AugmentError, AugmentOutcome, AugmentParams};
use crate::imgcore::geom::{crop, flip_horizontal, flip_vertical};
use crate::imgcore::{BitMask, ImageBuffer, Rect};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxis {
    Horizontal,
    Vertical,
    #[default]
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxFlipParams {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub axis: FlipAxis,
}

impl Default for BoxFlipParams {
    fn default() -> Self {
        Self {
            min_ratio: 0.3,
            max_ratio: 0.5,
            axis: FlipAxis::Random,
        }
    }
}

impl BoxFlipParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(self.min_ratio > 0.0 && self.min_ratio <= self.max_ratio && self.max_ratio <= 1.0) {
            return Err(AugmentError::InvalidParams(format!(
                "boxflip ratios must satisfy 0 < min <= max <= 1, got {} and {}",
                self.min_ratio, self.max_ratio
            )));
        }
        Ok(())
    }
}

/// Flips a random box in place. Each side is an independent
/// `U(min_ratio, max_ratio)` fraction of the matching image side.
pub fn boxflip<R: Rng + ?Sized>(
    image: &ImageBuffer,
    params: &BoxFlipParams,
    rng: &mut R,
) -> Result<AugmentOutcome, AugmentError> {
    params.validate()?;
    let (w, h) = image.dims();
    let side = |rng: &mut R, n: u32| {
        let r = if params.min_ratio == params.max_ratio {
            params.min_ratio
        } else {
            rng.gen_range(params.min_ratio..=params.max_ratio)
        };
        ((r * n as f64).round() as u32).clamp(1, n)
    };
    let pw = side(rng, w);
    let ph = side(rng, h);
    let x = rng.gen_range(0..=w - pw);
    let y = rng.gen_range(0..=h - ph);
    let axis = match params.axis {
        FlipAxis::Random if rng.gen_bool(0.5) => FlipAxis::Horizontal,
        FlipAxis::Random => FlipAxis::Vertical,
        a => a,
    };
    let rect = Rect::new(x, y, pw, ph);
    let patch = crop(image, rect)?;
    let flipped = match axis {
        FlipAxis::Horizontal => flip_horizontal(&patch),
        _ => flip_vertical(&patch),
    };
    let mut out = image.clone();
    for py in 0..ph {
        for px in 0..pw {
            out.set_pixel(x + px, y + py, flipped.pixel(px, py));
        }
    }
    Ok(AugmentOutcome {
        image: out,
        params: AugmentParams::Boxflip { patch: rect, axis },
        allowed: Some(BitMask::from_rect(w, h, rect)?),
    })
}

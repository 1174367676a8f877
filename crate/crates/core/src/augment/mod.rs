//! Local segment augmentation (BackFlip), its erase-only variant, BoxFlip and
//! the global baselines.

mod backflip;
mod boxflip;
mod global;
mod local;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backflip::{
    backflip, default_rules, erase_and_inpaint, sample_segment_transforms, BackflipConfig, Placement,
    SegmentOutcome, TransformRule,
};
pub use boxflip::{boxflip, BoxFlipParams, FlipAxis};
pub use global::{
    global_augment, resize_shortest_side, resized_crop_rect, shortest_side_dims, GlobalKind, GlobalRecord,
    GlobalSettings, GlobalTransform,
};
pub use local::{
    apply_sampled, extract_segment, transform_segment, LocalKind, LocalTransform, Patch, SampledTransform,
    DEFAULT_ANGLE_RANGE, DEFAULT_BRIGHTNESS_RANGE, DEFAULT_DOWNSCALE_RANGE, DEFAULT_UPSCALE_RANGE,
};

use crate::imgcore::{BitMask, ImageBuffer, ImgError, Rect};
use crate::inpaint::InpaintError;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("transform left the segment without pixels")]
    DegenerateResult,
    #[error("{width}x{height} image cannot hold a {target}x{target} crop")]
    ImageTooSmall { width: u32, height: u32, target: u32 },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("invalid augmentation parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Inpaint(#[from] InpaintError),
    #[error(transparent)]
    Image(#[from] ImgError),
}

/// What an augmentation did, in the form written to sidecars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AugmentParams {
    Identity,
    Backflip {
        inpaint: String,
        segments: Vec<SegmentOutcome>,
    },
    EraseInpaint {
        inpaint: String,
        segments: Vec<String>,
    },
    Boxflip {
        patch: Rect,
        axis: FlipAxis,
    },
    Global(GlobalRecord),
}

#[derive(Clone, Debug)]
pub struct AugmentOutcome {
    pub image: ImageBuffer,
    pub params: AugmentParams,
    /// Pixels the augmentation was allowed to change. `None` for global
    /// transforms, which may touch anything.
    pub allowed: Option<BitMask>,
}

impl AugmentOutcome {
    pub fn identity(image: &ImageBuffer, params: AugmentParams) -> Self {
        let (w, h) = image.dims();
        Self {
            image: image.clone(),
            params,
            allowed: Some(BitMask::new(w, h).expect("image dims are valid")),
        }
    }

    /// Whether every changed pixel lies in the allowed region. Always true
    /// for global transforms.
    pub fn respects_region(&self, input: &ImageBuffer) -> bool {
        match &self.allowed {
            None => true,
            Some(allowed) => match input.diff_mask(&self.image) {
                Ok(changed) => changed.is_subset_of(allowed),
                Err(_) => false,
            },
        }
    }
}

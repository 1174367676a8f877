//! Segment-level augmentation: BackFlip and erase+inpaint.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::local::{apply_sampled, extract_segment, LocalKind, LocalTransform, SampledTransform};
use super::{AugmentError, AugmentOutcome, AugmentParams};
use crate::imgcore::{BitMask, ImageBuffer, Rect};
use crate::inpaint::{affected_region, inpaint, inpaint_boundary_stat, BoundaryStat, InpaintKind, InpaintMethod};
use crate::segments::{select_for_epoch, Segment, SegmentIndex};
use crate::util::derived_rng;

/// One entry of a policy's transform list: a local transform and the
/// probability that it fires for a selected segment.
///
/// Ranges left unset take the transform's defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRule {
    pub kind: LocalKind,
    #[serde(default = "half")]
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brightness_range: Option<(f64, f64)>,
}

fn half() -> f64 {
    0.5
}

impl TransformRule {
    pub fn new(kind: LocalKind, probability: f64) -> Self {
        Self {
            kind,
            probability,
            angle_range: None,
            scale_range: None,
            brightness_range: None,
        }
    }

    pub fn transform(&self) -> LocalTransform {
        let d = LocalTransform::of(self.kind);
        LocalTransform {
            kind: self.kind,
            angle_range: self.angle_range.unwrap_or(d.angle_range),
            scale_range: self.scale_range.unwrap_or(d.scale_range),
            brightness_range: self.brightness_range.unwrap_or(d.brightness_range),
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(AugmentError::InvalidParams(format!(
                "{}: probability {} outside [0, 1]",
                self.kind, self.probability
            )));
        }
        self.transform().validate()
    }
}

/// The two independent flips at p = 0.5.
pub fn default_rules() -> Vec<TransformRule> {
    vec![
        TransformRule::new(LocalKind::Hflip, 0.5),
        TransformRule::new(LocalKind::Vflip, 0.5),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackflipConfig {
    pub k: usize,
    pub inpaint: InpaintMethod,
    pub transforms: Vec<TransformRule>,
}

impl Default for BackflipConfig {
    fn default() -> Self {
        Self {
            k: 3,
            inpaint: InpaintMethod::of(InpaintKind::Median),
            transforms: default_rules(),
        }
    }
}

impl BackflipConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        self.inpaint.validate()?;
        self.transforms.iter().try_for_each(TransformRule::validate)
    }
}

/// Where a transformed segment was pasted, in image coordinates. May extend
/// past the frame; pasting clips.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub id: String,
    pub bbox: Rect,
    pub transforms: Vec<SampledTransform>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
    /// The transform chain left no mask pixels; the segment was left alone.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub degenerate: bool,
}

/// Draws which transforms fire for one segment, and their parameters.
///
/// Every segment has its own stream keyed by `base` and the segment id, so
/// a segment's draws do not depend on which other segments were selected.
pub fn sample_segment_transforms(base: u64, segment_id: &str, rules: &[TransformRule]) -> Vec<SampledTransform> {
    let mut rng = derived_rng(&[b"segment", &base.to_le_bytes(), segment_id.as_bytes()]);
    let mut fired = Vec::new();
    for rule in rules {
        if rng.gen_bool(rule.probability) {
            fired.push(rule.transform().sample(&mut rng));
        }
    }
    fired
}

/// BackFlip: select up to `k` segments, transform each with the rules that
/// fire, inpaint the vacated areas and paste the transformed segments back in
/// selection order (later pastes win, pastes are clipped to the frame).
///
/// Only segments with at least one applied transform are erased. When none
/// qualifies the input is returned unchanged.
pub fn backflip<R: Rng + ?Sized>(
    image: &ImageBuffer,
    index: &SegmentIndex,
    cfg: &BackflipConfig,
    background: Option<&ImageBuffer>,
    rng: &mut R,
) -> Result<AugmentOutcome, AugmentError> {
    cfg.validate()?;
    check_index(image, index)?;
    let selected = select_for_epoch(index, cfg.k, rng);
    let base: u64 = rng.gen();

    let mut records = Vec::with_capacity(selected.len());
    let mut active: Vec<(&Segment, ImageBuffer, BitMask, i64, i64)> = Vec::new();
    for seg in selected {
        let fired = sample_segment_transforms(base, seg.id(), &cfg.transforms);
        let mut rec = SegmentOutcome {
            id: seg.id().to_string(),
            bbox: seg.record.bbox,
            transforms: fired.clone(),
            placement: None,
            degenerate: false,
        };
        if !fired.is_empty() {
            let patch = extract_segment(image, &seg.mask)?;
            match apply_chain(patch.pixels, patch.mask, &fired) {
                Ok((px, m, (dx, dy))) => {
                    let x = patch.origin.x as i64 + dx;
                    let y = patch.origin.y as i64 + dy;
                    rec.placement = Some(Placement {
                        x,
                        y,
                        w: m.width(),
                        h: m.height(),
                    });
                    active.push((seg, px, m, x, y));
                }
                Err(AugmentError::DegenerateResult) => rec.degenerate = true,
                Err(e) => return Err(e),
            }
        }
        records.push(rec);
    }

    let inpaint_name = cfg.inpaint.kind.name().to_string();
    if active.is_empty() {
        return Ok(AugmentOutcome::identity(
            image,
            AugmentParams::Backflip {
                inpaint: inpaint_name,
                segments: records,
            },
        ));
    }

    let masks: Vec<&BitMask> = active.iter().map(|a| &a.0.mask).collect();
    let (mut out, mut allowed) = erase(image, &masks, &cfg.inpaint, background)?;
    let (w, h) = image.dims();
    for (_, px, m, ox, oy) in &active {
        for (x, y) in m.iter_set() {
            let tx = ox + x as i64;
            let ty = oy + y as i64;
            if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
                continue;
            }
            out.set_pixel(tx as u32, ty as u32, px.pixel(x, y));
            allowed.set(tx as u32, ty as u32, true);
        }
    }
    Ok(AugmentOutcome {
        image: out,
        params: AugmentParams::Backflip {
            inpaint: inpaint_name,
            segments: records,
        },
        allowed: Some(allowed),
    })
}

/// BackFlip without the paste: the selected segments are removed and the
/// background inpainted.
pub fn erase_and_inpaint<R: Rng + ?Sized>(
    image: &ImageBuffer,
    index: &SegmentIndex,
    k: usize,
    method: &InpaintMethod,
    background: Option<&ImageBuffer>,
    rng: &mut R,
) -> Result<AugmentOutcome, AugmentError> {
    method.validate()?;
    check_index(image, index)?;
    let selected = select_for_epoch(index, k, rng);
    let params = AugmentParams::EraseInpaint {
        inpaint: method.kind.name().to_string(),
        segments: selected.iter().map(|s| s.id().to_string()).collect(),
    };
    if selected.is_empty() {
        return Ok(AugmentOutcome::identity(image, params));
    }
    let masks: Vec<&BitMask> = selected.iter().map(|s| &s.mask).collect();
    let (out, allowed) = erase(image, &masks, method, background)?;
    Ok(AugmentOutcome {
        image: out,
        params,
        allowed: Some(allowed),
    })
}

fn check_index(image: &ImageBuffer, index: &SegmentIndex) -> Result<(), AugmentError> {
    if index.dims() != image.dims() {
        return Err(AugmentError::DimensionMismatch {
            expected: image.dims(),
            actual: index.dims(),
        });
    }
    Ok(())
}

fn apply_chain(
    mut px: ImageBuffer,
    mut mask: BitMask,
    chain: &[SampledTransform],
) -> Result<(ImageBuffer, BitMask, (i64, i64)), AugmentError> {
    let (mut dx, mut dy) = (0i64, 0i64);
    for s in chain {
        let (p, m, (ox, oy)) = apply_sampled(&px, &mask, s)?;
        px = p;
        mask = m;
        dx += ox;
        dy += oy;
    }
    Ok((px, mask, (dx, dy)))
}

/// Inpaints the given masks and returns the result with the region it may
/// have touched.
///
/// Boundary statistics fill each segment from its own ring, one after the
/// other; the propagating and precomputed methods fill the union at once.
fn erase(
    image: &ImageBuffer,
    masks: &[&BitMask],
    method: &InpaintMethod,
    background: Option<&ImageBuffer>,
) -> Result<(ImageBuffer, BitMask), AugmentError> {
    let (w, h) = image.dims();
    let mut union = BitMask::new(w, h)?;
    for m in masks {
        union.union_with(m)?;
    }
    let allowed = affected_region(&union, method);
    let stat = match method.kind {
        InpaintKind::Mean => Some(BoundaryStat::Mean),
        InpaintKind::Median => Some(BoundaryStat::Median),
        _ => None,
    };
    let out = match stat {
        Some(stat) => {
            let radius = method.dilation_for(w, h);
            let mut cur = image.clone();
            for m in masks {
                cur = inpaint_boundary_stat(&cur, m, stat, radius)?;
            }
            cur
        }
        None => inpaint(image, &union, method, background)?,
    };
    Ok((out, allowed))
}

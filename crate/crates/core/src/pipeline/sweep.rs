use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::{run_epoch, CorpusContext, RunReport};
use super::{AugmentationPolicy, PipelineError};
use crate::augment::{LocalKind, TransformRule};
use crate::inpaint::InpaintKind;

/// The one policy dimension a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    InpaintMethod,
    LocalTransform,
    KSegments,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::InpaintMethod, SweepAxis::LocalTransform, SweepAxis::KSegments];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::InpaintMethod => "inpaint_method",
            SweepAxis::LocalTransform => "local_transform",
            SweepAxis::KSegments => "k_segments",
        }
    }

    /// Values swept when none are given.
    pub fn default_values(self, policy: &AugmentationPolicy) -> Vec<String> {
        match self {
            SweepAxis::InpaintMethod => ["mean", "median", "telea", "ns"].map(String::from).to_vec(),
            SweepAxis::LocalTransform => LOCAL_TRANSFORM_ROWS.map(String::from).to_vec(),
            SweepAxis::KSegments => (1..=policy.n_retained).map(|k| k.to_string()).collect(),
        }
    }

    /// The policy with this axis set to `value`, all else unchanged.
    pub fn apply(self, policy: &AugmentationPolicy, value: &str) -> Result<AugmentationPolicy, PipelineError> {
        let invalid = || PipelineError::InvalidAxisValue {
            axis: self,
            value: value.to_string(),
        };
        let mut p = policy.clone();
        match self {
            SweepAxis::InpaintMethod => {
                p.inpaint.kind = value.parse::<InpaintKind>().map_err(|_| invalid())?;
            }
            SweepAxis::LocalTransform => {
                p.transforms = local_transform_row(value).ok_or_else(invalid)?;
            }
            SweepAxis::KSegments => {
                let k: usize = value.parse().map_err(|_| invalid())?;
                if k == 0 || k > p.n_retained {
                    return Err(invalid());
                }
                p.k_segments = k;
            }
        }
        Ok(p)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown sweep axis {s:?} (expected inpaint_method, local_transform or k_segments)"))
    }
}

/// Rows of the local-transform ablation. Each fires with probability 0.5;
/// `hvflip` is both flips.
pub const LOCAL_TRANSFORM_ROWS: [&str; 7] =
    ["hflip", "vflip", "hvflip", "rotation", "upscale", "downscale", "brightness"];

fn local_transform_row(name: &str) -> Option<Vec<TransformRule>> {
    let one = |k| vec![TransformRule::new(k, 0.5)];
    Some(match name {
        "hflip" => one(LocalKind::Hflip),
        "vflip" => one(LocalKind::Vflip),
        "hvflip" => vec![
            TransformRule::new(LocalKind::Hflip, 0.5),
            TransformRule::new(LocalKind::Vflip, 0.5),
        ],
        "rotation" | "rotate" => one(LocalKind::Rotate),
        "upscale" => one(LocalKind::Upscale),
        "downscale" => one(LocalKind::Downscale),
        "brightness" => one(LocalKind::Brightness),
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub out_dir: PathBuf,
    pub augmented: usize,
    pub failures: usize,
    pub region_violations: usize,
    pub mean_changed_fraction: Option<f64>,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub epoch: u64,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    /// No failures and no changes outside the documented region.
    pub invariants_ok: bool,
    /// For the k axis: whether the mean changed fraction is non-decreasing
    /// in k.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotone_in_k: Option<bool>,
}

/// Runs one epoch per axis value, each into `out_dir/<axis>-<value>`. All
/// values are checked before anything runs.
pub fn sweep(
    ctx: &CorpusContext,
    axis: SweepAxis,
    values: &[String],
    epoch: u64,
    out_dir: &Path,
) -> Result<(SweepReport, Vec<RunReport>), PipelineError> {
    let policies = values
        .iter()
        .map(|v| {
            let p = axis.apply(&ctx.policy, v)?;
            p.validate()?;
            Ok(p)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (value, policy) in values.iter().zip(policies) {
        let sub = CorpusContext {
            policy,
            ..ctx.clone()
        };
        let dir = out_dir.join(format!("{axis}-{value}"));
        let run = run_epoch(&sub, epoch, &dir)?;
        rows.push(SweepRow {
            value: value.clone(),
            out_dir: dir,
            augmented: run.augmented,
            failures: run.failures,
            region_violations: run.region_violations(),
            mean_changed_fraction: run.mean_changed_fraction(),
            wall_time_ms: run.wall_time_ms,
        });
        runs.push(run);
    }

    let invariants_ok = rows.iter().all(|r| r.failures == 0 && r.region_violations == 0);
    let monotone_in_k = (axis == SweepAxis::KSegments).then(|| {
        let mut pts: Vec<(usize, f64)> = rows
            .iter()
            .map(|r| (r.value.parse().unwrap_or(0), r.mean_changed_fraction.unwrap_or(0.0)))
            .collect();
        pts.sort_by_key(|p| p.0);
        pts.windows(2).all(|w| w[1].1 >= w[0].1)
    });
    Ok((
        SweepReport {
            axis,
            epoch,
            seed: ctx.policy.seed,
            rows,
            invariants_ok,
            monotone_in_k,
        },
        runs,
    ))
}

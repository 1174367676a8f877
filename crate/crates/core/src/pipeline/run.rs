use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, ManifestEntry, Split};
use super::{io_err, AugmentationPolicy, PipelineError, PolicyMethod, RunConfig};
use crate::augment::{
    backflip, boxflip, erase_and_inpaint, global_augment, AugmentError, AugmentOutcome, AugmentParams,
    GlobalTransform,
};
use crate::imgcore::{decode_image, encode_png, read_image, ImageBuffer};
use crate::inpaint::load_precomputed_background;
use crate::segments::{
    build_index, index_file_name, list_mask_files, load_index, read_index_file, write_index, SegmentError,
    SegmentIndex,
};
use crate::util::{derived_rng, sha256_hex, write_atomic};

/// A loaded manifest with the locations and policy of a run.
#[derive(Clone, Debug)]
pub struct CorpusContext {
    pub manifest: CorpusManifest,
    pub masks_root: PathBuf,
    pub cache_dir: PathBuf,
    pub policy: AugmentationPolicy,
    pub workers: usize,
}

impl CorpusContext {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, PipelineError> {
        Ok(Self {
            manifest: CorpusManifest::load(&cfg.manifest)?,
            masks_root: cfg.masks_root.clone(),
            cache_dir: cfg.resolved_cache_dir(),
            policy: cfg.policy.clone(),
            workers: cfg.workers.unwrap_or_else(default_workers),
        })
    }

    /// Directory holding the masks, index and fingerprint of one image.
    pub fn mask_dir(&self, image_id: &str) -> PathBuf {
        self.masks_root.join(image_id)
    }

    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .expect("thread pool")
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Random stream of one image in one epoch.
pub fn image_rng(seed: u64, image_id: &str, epoch: u64) -> ChaCha8Rng {
    derived_rng(&[b"image", &seed.to_le_bytes(), &epoch.to_le_bytes(), image_id.as_bytes()])
}

/// Applies the policy's method to one image. A missing index counts as
/// having no segments.
pub fn augment_image<R: Rng + ?Sized>(
    image: &ImageBuffer,
    index: Option<&SegmentIndex>,
    policy: &AugmentationPolicy,
    background: Option<&ImageBuffer>,
    rng: &mut R,
) -> Result<AugmentOutcome, AugmentError> {
    let empty;
    let index = match index {
        Some(i) => i,
        None => {
            empty = SegmentIndex::empty("", image.width(), image.height(), policy.n_retained);
            &empty
        }
    };
    match policy.method {
        PolicyMethod::None => Ok(AugmentOutcome::identity(image, AugmentParams::Identity)),
        PolicyMethod::Backflip => backflip(image, index, &policy.backflip_config(), background, rng),
        PolicyMethod::EraseInpaint => {
            erase_and_inpaint(image, index, policy.k_segments, &policy.inpaint, background, rng)
        }
        PolicyMethod::Boxflip => boxflip(image, &policy.boxflip, rng),
        PolicyMethod::Global(kind) => global_augment(
            image,
            &GlobalTransform {
                kind,
                settings: policy.global,
            },
            rng,
        ),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Ok,
    /// Preprocessing inputs unchanged since the last run.
    Cached,
    /// Every mask was filtered out (or there were none).
    NoSegmentsRetained,
    MissingBackground,
    /// Not a training image; nothing written.
    Passthrough,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessEntry {
    pub image_id: String,
    pub status: EntryStatus,
    pub retained: usize,
    pub skipped_masks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub images: usize,
    pub index_files: usize,
    pub total_retained: usize,
    pub total_skipped_masks: usize,
    pub cached: usize,
    pub no_segments: usize,
    /// Entries with errors or missing backgrounds.
    pub incomplete: usize,
    pub wall_time_ms: f64,
    pub entries: Vec<PreprocessEntry>,
}

const FINGERPRINT_VERSION: &str = "backflip-index-v1";

fn fingerprint_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.fingerprint"))
}

/// Builds the segment index of every manifest image and, when the policy
/// uses precomputed backgrounds, checks that they exist.
///
/// Inputs are fingerprinted (image bytes, mask files, retention count); an
/// image whose fingerprint is unchanged is left untouched. Per-image
/// failures are recorded, not returned.
pub fn preprocess_corpus(ctx: &CorpusContext) -> Result<PreprocessReport, PipelineError> {
    ctx.policy.validate()?;
    let start = Instant::now();
    let entries: Vec<PreprocessEntry> = ctx.pool().install(|| {
        ctx.manifest
            .entries
            .par_iter()
            .map(|e| match preprocess_one(ctx, e) {
                Ok(entry) => entry,
                Err(err) => {
                    warn!("{}: {err}", e.image_id);
                    PreprocessEntry {
                        image_id: e.image_id.clone(),
                        status: EntryStatus::Error,
                        retained: 0,
                        skipped_masks: 0,
                        error: Some(err.to_string()),
                    }
                }
            })
            .collect()
    });
    let count = |s: EntryStatus| entries.iter().filter(|e| e.status == s).count();
    let report = PreprocessReport {
        images: entries.len(),
        index_files: entries.len() - count(EntryStatus::Error),
        total_retained: entries.iter().map(|e| e.retained).sum(),
        total_skipped_masks: entries.iter().map(|e| e.skipped_masks).sum(),
        cached: count(EntryStatus::Cached),
        no_segments: count(EntryStatus::NoSegmentsRetained),
        incomplete: count(EntryStatus::Error) + count(EntryStatus::MissingBackground),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        entries,
    };
    info!(
        "preprocessed {} images: {} retained segments, {} incomplete",
        report.images, report.total_retained, report.incomplete
    );
    Ok(report)
}

fn preprocess_one(ctx: &CorpusContext, entry: &ManifestEntry) -> Result<PreprocessEntry, PipelineError> {
    let id = &entry.image_id;
    let image_path = ctx.manifest.image_path(entry);
    let image_bytes = std::fs::read(&image_path).map_err(io_err(&image_path))?;
    let dir = ctx.mask_dir(id);

    let mut h = Vec::new();
    h.extend_from_slice(FINGERPRINT_VERSION.as_bytes());
    h.extend_from_slice(&(ctx.policy.n_retained as u64).to_le_bytes());
    h.extend_from_slice(sha256_hex(&image_bytes).as_bytes());
    for (_, path) in list_mask_files(&dir, id)? {
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        h.extend_from_slice(path.file_name().unwrap_or_default().as_encoded_bytes());
        h.extend_from_slice(sha256_hex(&bytes).as_bytes());
    }
    let fingerprint = sha256_hex(&h);
    let fp_path = fingerprint_path(&dir, id);
    let index_path = dir.join(index_file_name(id));

    let cached = std::fs::read_to_string(&fp_path).is_ok_and(|s| s.trim() == fingerprint) && index_path.is_file();
    let (dims, retained, skipped) = if cached {
        let file = read_index_file(&index_path)?;
        ((file.width, file.height), file.segments.len(), file.skipped_masks)
    } else {
        let image = decode_image(&image_bytes)?;
        let index = build_index(&dir, image.dims(), id, ctx.policy.n_retained)?;
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_index(&index, &dir)?;
        write_atomic(&fp_path, format!("{fingerprint}\n").as_bytes()).map_err(io_err(&fp_path))?;
        (image.dims(), index.len(), index.skipped_masks)
    };

    let mut out = PreprocessEntry {
        image_id: id.clone(),
        status: if cached { EntryStatus::Cached } else { EntryStatus::Ok },
        retained,
        skipped_masks: skipped,
        error: None,
    };
    if retained == 0 {
        out.status = EntryStatus::NoSegmentsRetained;
    }
    if ctx.policy.uses_background() {
        if let Err(e) = load_precomputed_background(id, &ctx.cache_dir, dims) {
            out.status = EntryStatus::MissingBackground;
            out.error = Some(e.to_string());
        }
    }
    Ok(out)
}

/// Parameters of one augmented image, written beside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub image_id: String,
    pub epoch: u64,
    pub seed: u64,
    pub method: String,
    pub params: AugmentParams,
    /// `None` when the output size differs from the input.
    pub changed_pixel_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRun {
    #[serde(rename = "id")]
    pub image_id: String,
    pub split: Split,
    pub status: EntryStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub changed_pixel_fraction: Option<f64>,
    /// Whether every changed pixel lies in the method's documented region;
    /// `None` for methods without one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params_sidecar: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: AugmentationPolicy,
    pub epoch: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub augmented: usize,
    pub passthrough: usize,
    pub failures: usize,
    pub per_image: Vec<ImageRun>,
    pub wall_time_ms: f64,
}

impl RunReport {
    /// Mean changed-pixel fraction over augmented images with a defined one.
    pub fn mean_changed_fraction(&self) -> Option<f64> {
        let v: Vec<f64> = self.per_image.iter().filter_map(|r| r.changed_pixel_fraction).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn region_violations(&self) -> usize {
        self.per_image.iter().filter(|r| r.region_ok == Some(false)).count()
    }
}

/// Augments every training image once. Writes `<id>.png` and `<id>.json`
/// into `out_dir`; val and test images get no artifacts.
///
/// Output depends only on the manifest, policy and epoch: each image draws
/// from its own stream and writes its own files.
pub fn run_epoch(ctx: &CorpusContext, epoch: u64, out_dir: &Path) -> Result<RunReport, PipelineError> {
    ctx.policy.validate()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let start = Instant::now();
    let per_image: Vec<ImageRun> = ctx.pool().install(|| {
        ctx.manifest
            .entries
            .par_iter()
            .map(|e| {
                if e.split != Split::Train {
                    return ImageRun {
                        image_id: e.image_id.clone(),
                        split: e.split,
                        status: EntryStatus::Passthrough,
                        changed_pixel_fraction: None,
                        region_ok: None,
                        params_sidecar: None,
                        error: None,
                    };
                }
                augment_entry(ctx, e, epoch, out_dir).unwrap_or_else(|err| {
                    warn!("{}: {err}", e.image_id);
                    ImageRun {
                        image_id: e.image_id.clone(),
                        split: e.split,
                        status: EntryStatus::Error,
                        changed_pixel_fraction: None,
                        region_ok: None,
                        params_sidecar: None,
                        error: Some(err.to_string()),
                    }
                })
            })
            .collect()
    });
    let count = |s: EntryStatus| per_image.iter().filter(|r| r.status == s).count();
    Ok(RunReport {
        policy: ctx.policy.clone(),
        epoch,
        workers: ctx.workers,
        out_dir: out_dir.to_path_buf(),
        augmented: count(EntryStatus::Ok),
        passthrough: count(EntryStatus::Passthrough),
        failures: count(EntryStatus::Error),
        per_image,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn load_index_for(ctx: &CorpusContext, image_id: &str) -> Result<SegmentIndex, PipelineError> {
    match load_index(&ctx.mask_dir(image_id), image_id) {
        Ok(i) => Ok(i),
        Err(SegmentError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
            Err(PipelineError::NotPreprocessed {
                image_id: image_id.to_string(),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn augment_entry(
    ctx: &CorpusContext,
    entry: &ManifestEntry,
    epoch: u64,
    out_dir: &Path,
) -> Result<ImageRun, PipelineError> {
    let id = &entry.image_id;
    let policy = &ctx.policy;
    let image = read_image(&ctx.manifest.image_path(entry))?;
    let index = if policy.uses_segments() {
        Some(load_index_for(ctx, id)?)
    } else {
        None
    };
    let background = if policy.uses_background() {
        Some(load_precomputed_background(id, &ctx.cache_dir, image.dims())?)
    } else {
        None
    };
    let mut rng = image_rng(policy.seed, id, epoch);
    let outcome = augment_image(&image, index.as_ref(), policy, background.as_ref(), &mut rng)?;

    let changed = (outcome.image.dims() == image.dims()).then(|| {
        image.count_changed(&outcome.image).expect("same dims") as f64 / image.pixel_count() as f64
    });
    let region_ok = outcome.allowed.as_ref().map(|_| outcome.respects_region(&image));

    let sidecar = Sidecar {
        image_id: id.clone(),
        epoch,
        seed: policy.seed,
        method: policy.method.to_string(),
        params: outcome.params,
        changed_pixel_fraction: changed,
    };
    let png_path = out_dir.join(format!("{id}.png"));
    write_atomic(&png_path, &encode_png(&outcome.image)?).map_err(io_err(&png_path))?;
    let sidecar_name = format!("{id}.json");
    let sidecar_path = out_dir.join(&sidecar_name);
    let mut json = serde_json::to_vec_pretty(&sidecar)?;
    json.push(b'\n');
    write_atomic(&sidecar_path, &json).map_err(io_err(&sidecar_path))?;

    Ok(ImageRun {
        image_id: id.clone(),
        split: entry.split,
        status: EntryStatus::Ok,
        changed_pixel_fraction: changed,
        region_ok,
        params_sidecar: Some(sidecar_name),
        error: None,
    })
}

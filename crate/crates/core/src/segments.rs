//! Segment ingestion, filtering and per-epoch selection.
//!
//! Masks are produced offline by an external segmenter and stored as
//! grayscale PNGs named `<image_id>.seg<k>.png`. Importing a directory
//! filters out background-like segments (bounding box covering more than
//! 90% of the frame), orders the survivors by pixel area and keeps the
//! first `n`. The result is persisted as `<image_id>.index.json` next to
//! the retained masks.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::{self, mask_bbox, BitMask, ImgError, Rect};
use crate::util::write_atomic;

/// Bounding-box to image area ratio above which a segment is dropped.
pub const MAX_BBOX_RATIO: f64 = 0.9;

/// Default number of segments kept per image.
pub const DEFAULT_N_RETAINED: usize = 5;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("mask {id} is {actual:?}, image is {expected:?}")]
    DimensionMismatch {
        id: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("no segments retained after filtering")]
    NoSegmentsRetained,
    #[error("retention count must be at least 1")]
    InvalidRetention,
    #[error("segment {0} has an empty mask")]
    EmptyMask(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed index file {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Image(#[from] ImgError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSource {
    #[default]
    ExternalSam,
    Synthetic,
}

/// Persisted description of one retained segment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub mask_file: String,
    pub area: u64,
    pub bbox: Rect,
    #[serde(default)]
    pub source: SegmentSource,
}

/// A segment record together with its loaded mask.
#[derive(Clone, Debug)]
pub struct Segment {
    pub record: SegmentRecord,
    pub mask: BitMask,
}

impl Segment {
    pub fn from_mask(
        id: impl Into<String>,
        mask_file: impl Into<String>,
        mask: BitMask,
        source: SegmentSource,
    ) -> Result<Self, SegmentError> {
        let id = id.into();
        let bbox = mask_bbox(&mask).map_err(|_| SegmentError::EmptyMask(id.clone()))?;
        let area = mask.count() as u64;
        Ok(Self {
            record: SegmentRecord {
                id,
                mask_file: mask_file.into(),
                area,
                bbox,
                source,
            },
            mask,
        })
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }
}

/// Filtered, area-ordered segments of one image.
#[derive(Clone, Debug)]
pub struct SegmentIndex {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub n_retained: usize,
    pub segments: Vec<Segment>,
    pub skipped_masks: usize,
}

impl SegmentIndex {
    pub fn empty(image_id: impl Into<String>, width: u32, height: u32, n_retained: usize) -> Self {
        Self {
            image_id: image_id.into(),
            width,
            height,
            n_retained,
            segments: Vec::new(),
            skipped_masks: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn to_file(&self) -> IndexFile {
        IndexFile {
            image_id: self.image_id.clone(),
            width: self.width,
            height: self.height,
            n_retained: self.n_retained,
            segments: self.segments.iter().map(|s| s.record.clone()).collect(),
            skipped_masks: self.skipped_masks,
        }
    }
}

/// On-disk JSON layout of a segment index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexFile {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub n_retained: usize,
    pub segments: Vec<SegmentRecord>,
    pub skipped_masks: usize,
}

/// Whether a bounding box is small enough, relative to the frame, to count
/// as a local segment. A ratio of exactly 0.9 is kept.
pub fn bbox_ratio_ok(bbox: &Rect, width: u32, height: u32) -> bool {
    // bbox / image > 9 / 10, in exact integer arithmetic
    bbox.area() as u128 * 10 <= width as u128 * height as u128 * 9
}

/// Drops background-like candidates, sorts by area (descending, ties by
/// ascending id) and keeps the first `n`.
pub fn filter_segments(
    image_id: &str,
    candidates: Vec<Segment>,
    image_size: (u32, u32),
    n: usize,
) -> Result<SegmentIndex, SegmentError> {
    if n == 0 {
        return Err(SegmentError::InvalidRetention);
    }
    let (w, h) = image_size;
    let mut kept = Vec::with_capacity(candidates.len());
    for seg in candidates {
        if seg.mask.dims() != image_size {
            return Err(SegmentError::DimensionMismatch {
                id: seg.record.id,
                expected: image_size,
                actual: seg.mask.dims(),
            });
        }
        if bbox_ratio_ok(&seg.record.bbox, w, h) {
            kept.push(seg);
        }
    }
    if kept.is_empty() {
        return Err(SegmentError::NoSegmentsRetained);
    }
    kept.sort_by(|a, b| {
        b.record
            .area
            .cmp(&a.record.area)
            .then_with(|| a.record.id.cmp(&b.record.id))
    });
    kept.truncate(n);
    Ok(SegmentIndex {
        image_id: image_id.to_string(),
        width: w,
        height: h,
        n_retained: n,
        segments: kept,
        skipped_masks: 0,
    })
}

pub fn index_file_name(image_id: &str) -> String {
    format!("{image_id}.index.json")
}

pub fn mask_file_name(image_id: &str, k: usize) -> String {
    format!("{image_id}.seg{k}.png")
}

/// Mask files `<image_id>.seg<k>.png` in `dir`, ordered by `k`.
pub fn list_mask_files(dir: &Path, image_id: &str) -> Result<Vec<(usize, PathBuf)>, SegmentError> {
    let mut found = Vec::new();
    if !dir.exists() {
        return Ok(found);
    }
    let prefix = format!("{image_id}.seg");
    let entries = fs::read_dir(dir).map_err(|source| SegmentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| SegmentError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(k) = name
            .strip_prefix(&prefix)
            .and_then(|rest| rest.strip_suffix(".png"))
            .and_then(|k| k.parse::<usize>().ok())
        else {
            continue;
        };
        found.push((k, entry.path()));
    }
    found.sort();
    Ok(found)
}

/// Loads `<image_id>.seg<k>.png` masks from `mask_dir`, filters them and
/// writes the index beside the masks.
pub fn import_masks(
    mask_dir: &Path,
    image_size: (u32, u32),
    image_id: &str,
    n: usize,
) -> Result<SegmentIndex, SegmentError> {
    import_masks_into(mask_dir, mask_dir, image_size, image_id, n)
}

/// As [`import_masks`], but writes the index and copies of the retained
/// masks into `out_dir`.
pub fn import_masks_into(
    mask_dir: &Path,
    out_dir: &Path,
    image_size: (u32, u32),
    image_id: &str,
    n: usize,
) -> Result<SegmentIndex, SegmentError> {
    let index = build_index(mask_dir, image_size, image_id, n)?;
    fs::create_dir_all(out_dir).map_err(|source| SegmentError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    if !same_dir(mask_dir, out_dir) {
        for seg in &index.segments {
            let bytes = imgcore::encode_mask_png(&seg.mask)?;
            let dest = out_dir.join(&seg.record.mask_file);
            write_atomic(&dest, &bytes).map_err(|source| SegmentError::Io { path: dest, source })?;
        }
    }
    write_index(&index, out_dir)?;
    Ok(index)
}

/// Loads and filters masks without touching the filesystem beyond reads.
pub fn build_index(
    mask_dir: &Path,
    image_size: (u32, u32),
    image_id: &str,
    n: usize,
) -> Result<SegmentIndex, SegmentError> {
    if n == 0 {
        return Err(SegmentError::InvalidRetention);
    }
    let mut candidates = Vec::new();
    let mut skipped = 0;
    for (_, path) in list_mask_files(mask_dir, image_id)? {
        let file = path
            .file_name()
            .and_then(|f| f.to_str())
            .unwrap_or_default()
            .to_string();
        let id = file.trim_end_matches(".png").to_string();
        let mask = match imgcore::read_mask(&path) {
            Ok(m) => m,
            Err(ImgError::Io { path, source }) => {
                return Err(SegmentError::Io {
                    path: path.into(),
                    source,
                })
            }
            Err(e) => {
                warn!("skipping unreadable mask {}: {e}", path.display());
                skipped += 1;
                continue;
            }
        };
        if mask.dims() != image_size {
            warn!(
                "skipping mask {} with size {:?}, image is {:?}",
                path.display(),
                mask.dims(),
                image_size
            );
            skipped += 1;
            continue;
        }
        match Segment::from_mask(id, file, mask, SegmentSource::ExternalSam) {
            Ok(seg) => candidates.push(seg),
            Err(_) => {
                warn!("skipping empty mask {}", path.display());
                skipped += 1;
            }
        }
    }
    let mut index = match filter_segments(image_id, candidates, image_size, n) {
        Ok(index) => index,
        Err(SegmentError::NoSegmentsRetained) => {
            SegmentIndex::empty(image_id, image_size.0, image_size.1, n)
        }
        Err(e) => return Err(e),
    };
    index.skipped_masks = skipped;
    Ok(index)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

pub fn write_index(index: &SegmentIndex, dir: &Path) -> Result<PathBuf, SegmentError> {
    let path = dir.join(index_file_name(&index.image_id));
    let mut json = serde_json::to_vec_pretty(&index.to_file()).map_err(|source| SegmentError::Json {
        path: path.clone(),
        source,
    })?;
    json.push(b'\n');
    write_atomic(&path, &json).map_err(|source| SegmentError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn read_index_file(path: &Path) -> Result<IndexFile, SegmentError> {
    let bytes = fs::read(path).map_err(|source| SegmentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| SegmentError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads `<image_id>.index.json` from `dir` and loads the referenced masks.
pub fn load_index(dir: &Path, image_id: &str) -> Result<SegmentIndex, SegmentError> {
    let file = read_index_file(&dir.join(index_file_name(image_id)))?;
    let dims = (file.width, file.height);
    let mut segments = Vec::with_capacity(file.segments.len());
    for record in file.segments {
        let mask = imgcore::read_mask(&dir.join(&record.mask_file))?;
        if mask.dims() != dims {
            return Err(SegmentError::DimensionMismatch {
                id: record.id,
                expected: dims,
                actual: mask.dims(),
            });
        }
        segments.push(Segment { record, mask });
    }
    Ok(SegmentIndex {
        image_id: file.image_id,
        width: file.width,
        height: file.height,
        n_retained: file.n_retained,
        segments,
        skipped_masks: file.skipped_masks,
    })
}

/// Positions of `min(k, len)` uniformly chosen segments, ascending.
///
/// A full shuffle is drawn regardless of `k`, so for a fixed stream the
/// selection for `k` is a prefix-subset of the selection for `k + 1`.
pub fn select_positions<R: Rng + ?Sized>(len: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.truncate(k.min(len));
    order.sort_unstable();
    order
}

/// Uniform sample without replacement of `min(k, available)` segments,
/// returned in index order.
pub fn select_for_epoch<'a, R: Rng + ?Sized>(
    index: &'a SegmentIndex,
    k: usize,
    rng: &mut R,
) -> Vec<&'a Segment> {
    select_positions(index.len(), k, rng)
        .into_iter()
        .map(|i| &index.segments[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rect_segment(id: &str, w: u32, h: u32, r: Rect) -> Segment {
        Segment::from_mask(
            id,
            format!("{id}.png"),
            BitMask::from_rect(w, h, r).unwrap(),
            SegmentSource::Synthetic,
        )
        .unwrap()
    }

    #[test]
    fn full_frame_segment_is_excluded() {
        let segs = vec![rect_segment("bg", 224, 224, Rect::new(0, 0, 224, 224))];
        assert!(matches!(
            filter_segments("img", segs, (224, 224), 5),
            Err(SegmentError::NoSegmentsRetained)
        ));
    }

    #[test]
    fn sorted_by_area_and_truncated() {
        // areas 50, 200, 100
        let segs = vec![
            rect_segment("a", 40, 40, Rect::new(0, 0, 10, 5)),
            rect_segment("b", 40, 40, Rect::new(0, 0, 20, 10)),
            rect_segment("c", 40, 40, Rect::new(0, 0, 10, 10)),
        ];
        let idx = filter_segments("img", segs, (40, 40), 2).unwrap();
        let areas: Vec<u64> = idx.segments.iter().map(|s| s.record.area).collect();
        assert_eq!(areas, vec![200, 100]);
        assert_eq!(idx.n_retained, 2);
    }

    #[test]
    fn ratio_threshold_boundary() {
        // 95*95/10000 = 0.9025 > 0.9 ; 94*94/10000 = 0.8836 <= 0.9
        assert!(95.0 * 95.0 / 10_000.0 > MAX_BBOX_RATIO);
        assert!(94.0 * 94.0 / 10_000.0 <= MAX_BBOX_RATIO);
        let segs = vec![
            rect_segment("big", 100, 100, Rect::new(0, 0, 95, 95)),
            rect_segment("ok", 100, 100, Rect::new(0, 0, 94, 94)),
        ];
        let idx = filter_segments("img", segs, (100, 100), 5).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.segments[0].id(), "ok");
    }

    #[test]
    fn exact_point_nine_is_kept() {
        // 90x100 on 100x100 is exactly 0.9
        assert!(bbox_ratio_ok(&Rect::new(0, 0, 90, 100), 100, 100));
        assert!(!bbox_ratio_ok(&Rect::new(0, 0, 91, 100), 100, 100));
    }

    #[test]
    fn ties_broken_by_id() {
        let segs = vec![
            rect_segment("z", 30, 30, Rect::new(0, 0, 5, 5)),
            rect_segment("a", 30, 30, Rect::new(10, 10, 5, 5)),
            rect_segment("m", 30, 30, Rect::new(20, 20, 5, 5)),
        ];
        let idx = filter_segments("img", segs, (30, 30), 5).unwrap();
        let ids: Vec<&str> = idx.segments.iter().map(|s| s.id()).collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn mismatched_candidate_is_rejected() {
        let segs = vec![rect_segment("a", 30, 20, Rect::new(0, 0, 5, 5))];
        assert!(matches!(
            filter_segments("img", segs, (30, 30), 5),
            Err(SegmentError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            filter_segments("img", vec![], (30, 30), 0),
            Err(SegmentError::InvalidRetention)
        ));
    }

    fn index_of(n: usize) -> SegmentIndex {
        let segs = (0..n)
            .map(|i| rect_segment(&format!("s{i}"), 64, 64, Rect::new(0, 0, 10 + i as u32, 10)))
            .collect();
        filter_segments("img", segs, (64, 64), n).unwrap()
    }

    #[test]
    fn selection_examples() {
        let idx = index_of(5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let three = select_for_epoch(&idx, 3, &mut rng);
        assert_eq!(three.len(), 3);
        let mut ids: Vec<&str> = three.iter().map(|s| s.id()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 3);
        assert!(select_for_epoch(&idx, 0, &mut rng).is_empty());
        let small = index_of(2);
        assert_eq!(select_for_epoch(&small, 5, &mut rng).len(), 2);
        let empty = SegmentIndex::empty("e", 4, 4, 5);
        assert!(select_for_epoch(&empty, 3, &mut rng).is_empty());
    }

    #[test]
    fn selection_is_deterministic_and_ordered() {
        let idx = index_of(5);
        let a = select_positions(idx.len(), 3, &mut ChaCha8Rng::seed_from_u64(99));
        let b = select_positions(idx.len(), 3, &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn selection_nested_in_k() {
        for seed in 0..50 {
            let mut prev: Vec<usize> = Vec::new();
            for k in 1..=5 {
                let cur = select_positions(5, k, &mut ChaCha8Rng::seed_from_u64(seed));
                assert!(prev.iter().all(|p| cur.contains(p)));
                prev = cur;
            }
        }
    }

    #[test]
    fn selection_frequency_is_uniform() {
        let trials = 10_000;
        let mut counts = [0usize; 5];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..trials {
            counts[select_positions(5, 1, &mut rng)[0]] += 1;
        }
        let p: f64 = 0.2;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn import_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let (w, h) = (32, 24);
        let rects = [
            Rect::new(0, 0, 4, 4),
            Rect::new(5, 5, 10, 8),
            Rect::new(2, 10, 6, 6),
            Rect::new(0, 0, 32, 24),
        ];
        for (k, r) in rects.iter().enumerate() {
            let m = BitMask::from_rect(w, h, *r).unwrap();
            fs::write(
                dir.path().join(mask_file_name("pic", k)),
                imgcore::encode_mask_png(&m).unwrap(),
            )
            .unwrap();
        }
        // wrong size, skipped
        let bad = BitMask::from_rect(10, 10, Rect::new(0, 0, 2, 2)).unwrap();
        fs::write(
            dir.path().join(mask_file_name("pic", 9)),
            imgcore::encode_mask_png(&bad).unwrap(),
        )
        .unwrap();
        // unrelated file ignored
        fs::write(dir.path().join("other.seg0.png"), b"junk").unwrap();

        let idx = import_masks(dir.path(), (w, h), "pic", 5).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.skipped_masks, 1);
        let areas: Vec<u64> = idx.segments.iter().map(|s| s.record.area).collect();
        assert_eq!(areas, vec![80, 36, 16]);

        let reloaded = load_index(dir.path(), "pic").unwrap();
        assert_eq!(reloaded.len(), 3);
        for (a, b) in reloaded.segments.iter().zip(&idx.segments) {
            assert_eq!(a.record, b.record);
            assert_eq!(a.mask, b.mask);
        }
        let file = read_index_file(&dir.path().join("pic.index.json")).unwrap();
        assert_eq!(file.skipped_masks, 1);
        assert_eq!(file.n_retained, 5);
    }

    #[test]
    fn import_empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let idx = import_masks(dir.path(), (8, 8), "none", 5).unwrap();
        assert!(idx.is_empty());
        assert!(dir.path().join("none.index.json").exists());
    }

    #[test]
    fn import_into_other_dir_copies_retained_masks() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        for k in 0..3 {
            let m = BitMask::from_rect(16, 16, Rect::new(k, k, 3 + k, 3)).unwrap();
            fs::write(
                src.path().join(mask_file_name("p", k as usize)),
                imgcore::encode_mask_png(&m).unwrap(),
            )
            .unwrap();
        }
        let idx = import_masks_into(src.path(), out.path(), (16, 16), "p", 1).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.segments[0].record.mask_file, "p.seg2.png");
        assert!(out.path().join("p.seg2.png").exists());
        assert!(!out.path().join("p.seg0.png").exists());
        assert_eq!(load_index(out.path(), "p").unwrap().len(), 1);
    }
}

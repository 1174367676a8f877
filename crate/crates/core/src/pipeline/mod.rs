//! Corpus orchestration: manifests, preprocessing caches, per-epoch runs and
//! ablation sweeps.

mod manifest;
mod run;
mod sweep;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{CorpusManifest, ManifestEntry, Split};
pub use run::{
    augment_image, image_rng, preprocess_corpus, run_epoch, CorpusContext, EntryStatus, ImageRun, PreprocessEntry,
    PreprocessReport, RunReport, Sidecar,
};
pub use sweep::{sweep, SweepAxis, SweepReport, SweepRow, LOCAL_TRANSFORM_ROWS};

use crate::augment::{
    default_rules, AugmentError, BackflipConfig, BoxFlipParams, FlipAxis, GlobalKind, GlobalSettings, TransformRule,
};
use crate::inpaint::{InpaintError, InpaintKind, InpaintMethod};
use crate::segments::{SegmentError, DEFAULT_N_RETAINED};
use crate::imgcore::ImgError;

/// Environment variable that overrides the configured background cache.
pub const CACHE_DIR_ENV: &str = "BACKFLIP_CACHE_DIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("duplicate image id {0:?} in manifest")]
    DuplicateId(String),
    #[error("invalid config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("unknown override key {0:?}")]
    UnknownOverride(String),
    #[error("invalid value for {key}: {message}")]
    InvalidOverride { key: String, message: String },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid value {value:?} for sweep axis {axis}")]
    InvalidAxisValue { axis: SweepAxis, value: String },
    #[error("segment index for {image_id} not found; run preprocess first")]
    NotPreprocessed { image_id: String },
    #[error(transparent)]
    Image(#[from] ImgError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Inpaint(#[from] InpaintError),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which augmentation a run applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyMethod {
    #[default]
    Backflip,
    EraseInpaint,
    Boxflip,
    Global(GlobalKind),
    None,
}

impl fmt::Display for PolicyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyMethod::Backflip => f.write_str("backflip"),
            PolicyMethod::EraseInpaint => f.write_str("erase_inpaint"),
            PolicyMethod::Boxflip => f.write_str("boxflip"),
            PolicyMethod::Global(k) => write!(f, "global:{k}"),
            PolicyMethod::None => f.write_str("none"),
        }
    }
}

impl FromStr for PolicyMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "backflip" => Ok(PolicyMethod::Backflip),
            "erase_inpaint" => Ok(PolicyMethod::EraseInpaint),
            "boxflip" => Ok(PolicyMethod::Boxflip),
            "none" => Ok(PolicyMethod::None),
            _ => match s.strip_prefix("global:") {
                Some(k) => k.parse().map(PolicyMethod::Global),
                None => Err(format!(
                    "unknown method {s:?} (expected backflip, erase_inpaint, boxflip, global:<kind> or none)"
                )),
            },
        }
    }
}

impl TryFrom<String> for PolicyMethod {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PolicyMethod> for String {
    fn from(m: PolicyMethod) -> Self {
        m.to_string()
    }
}

/// Everything that determines an epoch's output besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub method: PolicyMethod,
    pub inpaint: InpaintMethod,
    pub k_segments: usize,
    pub n_retained: usize,
    pub transforms: Vec<TransformRule>,
    pub seed: u64,
    pub boxflip: BoxFlipParams,
    pub global: GlobalSettings,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            method: PolicyMethod::Backflip,
            inpaint: InpaintMethod::of(InpaintKind::Median),
            k_segments: 3,
            n_retained: DEFAULT_N_RETAINED,
            transforms: default_rules(),
            seed: 0,
            boxflip: BoxFlipParams::default(),
            global: GlobalSettings::default(),
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidPolicy(m));
        if self.n_retained == 0 {
            return bad("n_retained must be at least 1".into());
        }
        if self.k_segments > self.n_retained {
            return bad(format!(
                "k_segments ({}) exceeds n_retained ({})",
                self.k_segments, self.n_retained
            ));
        }
        self.inpaint
            .validate()
            .map_err(|e| PipelineError::InvalidPolicy(e.to_string()))?;
        for r in &self.transforms {
            r.validate().map_err(|e| PipelineError::InvalidPolicy(e.to_string()))?;
        }
        self.boxflip
            .validate()
            .map_err(|e| PipelineError::InvalidPolicy(e.to_string()))?;
        self.global
            .validate()
            .map_err(|e| PipelineError::InvalidPolicy(e.to_string()))?;
        Ok(())
    }

    pub fn backflip_config(&self) -> BackflipConfig {
        BackflipConfig {
            k: self.k_segments,
            inpaint: self.inpaint.clone(),
            transforms: self.transforms.clone(),
        }
    }

    /// Whether the method reads segment indexes.
    pub fn uses_segments(&self) -> bool {
        matches!(self.method, PolicyMethod::Backflip | PolicyMethod::EraseInpaint)
    }

    /// Whether the method reads precomputed backgrounds.
    pub fn uses_background(&self) -> bool {
        self.uses_segments() && self.inpaint.kind == InpaintKind::ExternalPrecomputed
    }
}

/// A run configuration file: corpus locations plus the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub masks_root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub policy: AugmentationPolicy,
}

impl RunConfig {
    /// Reads a `.json` or TOML config. Relative paths are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let config_err = |message: String| PipelineError::Config {
            path: path.to_path_buf(),
            message,
        };
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| config_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| config_err(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.masks_root = base.join(&cfg.masks_root);
        cfg.cache_dir = cfg.cache_dir.map(|d| base.join(d));
        Ok(cfg)
    }

    /// Background cache: the environment override, then the configured
    /// directory, then `masks_root`.
    pub fn resolved_cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.cache_dir.clone().unwrap_or_else(|| self.masks_root.clone()),
        }
    }

    /// Applies one `key=value` override. Keys are limited to
    /// [`OVERRIDE_KEYS`].
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let invalid = |message: String| PipelineError::InvalidOverride {
            key: key.to_string(),
            message,
        };
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.trim().parse::<T>().map_err(|e| e.to_string())
        }
        let p = &mut self.policy;
        match key {
            "manifest" => self.manifest = PathBuf::from(value),
            "masks_root" => self.masks_root = PathBuf::from(value),
            "cache_dir" => self.cache_dir = Some(PathBuf::from(value)),
            "workers" => self.workers = Some(num(value).map_err(invalid)?),
            "method" => p.method = value.parse().map_err(invalid)?,
            "seed" => p.seed = num(value).map_err(invalid)?,
            "k_segments" => p.k_segments = num(value).map_err(invalid)?,
            "n_retained" => p.n_retained = num(value).map_err(invalid)?,
            "inpaint.kind" => p.inpaint.kind = value.parse().map_err(invalid)?,
            "inpaint.dilation_radius" => p.inpaint.dilation_radius = Some(num(value).map_err(invalid)?),
            "inpaint.telea_radius" => p.inpaint.telea_radius = num(value).map_err(invalid)?,
            "inpaint.ns_iterations" => p.inpaint.ns_iterations = num(value).map_err(invalid)?,
            "inpaint.ns_dt" => p.inpaint.ns_dt = num(value).map_err(invalid)?,
            "transforms" => p.transforms = parse_transform_list(value).map_err(invalid)?,
            "boxflip.min_ratio" => p.boxflip.min_ratio = num(value).map_err(invalid)?,
            "boxflip.max_ratio" => p.boxflip.max_ratio = num(value).map_err(invalid)?,
            "boxflip.axis" => {
                p.boxflip.axis = match value {
                    "horizontal" => FlipAxis::Horizontal,
                    "vertical" => FlipAxis::Vertical,
                    "random" => FlipAxis::Random,
                    _ => return Err(invalid("expected horizontal, vertical or random".into())),
                }
            }
            "global.target" => p.global.target = num(value).map_err(invalid)?,
            _ => return Err(PipelineError::UnknownOverride(key.to_string())),
        }
        Ok(())
    }
}

/// Keys accepted by [`RunConfig::apply_override`].
pub const OVERRIDE_KEYS: &[&str] = &[
    "manifest",
    "masks_root",
    "cache_dir",
    "workers",
    "method",
    "seed",
    "k_segments",
    "n_retained",
    "inpaint.kind",
    "inpaint.dilation_radius",
    "inpaint.telea_radius",
    "inpaint.ns_iterations",
    "inpaint.ns_dt",
    "transforms",
    "boxflip.min_ratio",
    "boxflip.max_ratio",
    "boxflip.axis",
    "global.target",
];

/// Parses `kind[:p],kind[:p],...`, e.g. `hflip:0.5,vflip:0.5`. A missing
/// probability means 0.5; an empty string means no transforms.
pub fn parse_transform_list(s: &str) -> Result<Vec<TransformRule>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|item| {
            let (kind, p) = match item.split_once(':') {
                Some((k, p)) => (k, p.trim().parse::<f64>().map_err(|e| format!("{item}: {e}"))?),
                None => (item, 0.5),
            };
            Ok(TransformRule::new(kind.trim().parse()?, p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::LocalKind;

    #[test]
    fn method_strings_round_trip() {
        for s in ["backflip", "erase_inpaint", "boxflip", "none", "global:random_resized_crop", "global:hflip"] {
            assert_eq!(s.parse::<PolicyMethod>().unwrap().to_string(), s);
        }
        assert!("global:shear".parse::<PolicyMethod>().is_err());
        assert!("flip".parse::<PolicyMethod>().is_err());
    }

    #[test]
    fn toml_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, crate::toy::DEFAULT_CONFIG).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.manifest, dir.path().join("manifest.jsonl"));
        assert_eq!(cfg.policy, AugmentationPolicy::default());
        cfg.policy.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "manifest = \"m\"\nmasks_root = \"x\"\n[policy]\nk = 3\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(PipelineError::Config { .. })));
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"manifest":"m","masks_root":"x","policy":{"inpaint":{"kind":"telea","radius":2}}}"#)
            .unwrap();
        assert!(matches!(RunConfig::load(&path), Err(PipelineError::Config { .. })));
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig {
            manifest: "m".into(),
            masks_root: "r".into(),
            cache_dir: None,
            workers: None,
            policy: AugmentationPolicy::default(),
        };
        cfg.apply_override("k_segments", "5").unwrap();
        cfg.apply_override("inpaint.kind", "telea").unwrap();
        cfg.apply_override("transforms", "rotate:1, brightness").unwrap();
        cfg.apply_override("method", "global:rotate").unwrap();
        assert_eq!(cfg.policy.k_segments, 5);
        assert_eq!(cfg.policy.inpaint.kind, InpaintKind::Telea);
        assert_eq!(
            cfg.policy.transforms,
            vec![TransformRule::new(LocalKind::Rotate, 1.0), TransformRule::new(LocalKind::Brightness, 0.5)]
        );
        assert!(matches!(cfg.apply_override("colour", "red"), Err(PipelineError::UnknownOverride(_))));
        assert!(matches!(cfg.apply_override("seed", "x"), Err(PipelineError::InvalidOverride { .. })));
        for key in OVERRIDE_KEYS {
            assert!(!matches!(cfg.clone().apply_override(key, "1"), Err(PipelineError::UnknownOverride(_))), "{key}");
        }
    }

    #[test]
    fn policy_validation() {
        let mut p = AugmentationPolicy::default();
        p.k_segments = 6;
        assert!(p.validate().is_err());
        let mut p = AugmentationPolicy::default();
        p.transforms[0].probability = -0.1;
        assert!(p.validate().is_err());
        let mut p = AugmentationPolicy::default();
        p.inpaint.ns_dt = 2.0;
        assert!(p.validate().is_err());
    }
}

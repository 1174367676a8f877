use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, PipelineError};
use crate::metrics::normalize_score;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub image_path: PathBuf,
    pub score: f64,
    pub split: Split,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    score_scale: (f64, f64),
}

/// Images of a corpus with their scores and splits.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub score_scale: (f64, f64),
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    /// Reads JSON lines. An optional first line `{"score_scale": [min, max]}`
    /// declares the score range (default `[0, 1]`); every other non-blank
    /// line is one entry.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, path, base_dir)
    }

    pub fn parse(text: &str, path: &Path, base_dir: PathBuf) -> Result<Self, PipelineError> {
        let err = |line: usize, message: String| PipelineError::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut score_scale = (0.0, 1.0);
        let mut entries = Vec::new();
        let mut seen_entry = false;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !seen_entry && line.contains("\"score_scale\"") {
                let h: Header = serde_json::from_str(line).map_err(|e| err(line_no, e.to_string()))?;
                score_scale = h.score_scale;
                seen_entry = true;
                continue;
            }
            seen_entry = true;
            let e: ManifestEntry = serde_json::from_str(line).map_err(|e| err(line_no, e.to_string()))?;
            check_id(&e.image_id).map_err(|m| err(line_no, m))?;
            entries.push((line_no, e));
        }
        let (lo, hi) = score_scale;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(err(1, format!("invalid score_scale [{lo}, {hi}]")));
        }
        let mut ids = HashSet::new();
        for (line_no, e) in &entries {
            if !ids.insert(e.image_id.as_str()) {
                return Err(PipelineError::DuplicateId(e.image_id.clone()));
            }
            if !(e.score.is_finite() && e.score >= lo && e.score <= hi) {
                return Err(err(
                    *line_no,
                    format!("score {} of {} outside [{lo}, {hi}]", e.score, e.image_id),
                ));
            }
        }
        Ok(Self {
            entries: entries.into_iter().map(|(_, e)| e).collect(),
            score_scale,
            base_dir,
        })
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.image_path)
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    /// Score mapped onto `[0, 1]` by the declared scale.
    pub fn normalized_score(&self, entry: &ManifestEntry) -> f64 {
        normalize_score(entry.score, self.score_scale)
    }
}

/// Ids become file names, so they must be plain path components.
fn check_id(id: &str) -> Result<(), String> {
    if id.is_empty()
        || id == "."
        || id == ".."
        || id.contains(['/', '\\'])
        || id.chars().any(char::is_control)
    {
        return Err(format!("image_id {id:?} is not usable as a file name"));
    }
    Ok(())
}

//! Agreement between ground-truth and predicted aesthetic scores.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least two aligned scores, got {0}")]
    TooShort(usize),
    #[error("length mismatch: {ids} ids, {y_true} true scores, {y_pred} predictions")]
    LengthMismatch { ids: usize, y_true: usize, y_pred: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("non-finite score for {0:?}")]
    NonFinite(String),
    #[error("{0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("invalid score scale [{0}, {1}]")]
    InvalidScale(f64, f64),
    #[error("score {value} for {id:?} lies outside the scale [{min}, {max}]")]
    OutOfScale { id: String, value: f64, min: f64, max: f64 },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("CSV header must be id,y_true,y_pred, found {0}")]
    Header(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Aligned true and predicted scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    ids: Vec<String>,
    y_true: Vec<f64>,
    y_pred: Vec<f64>,
}

impl ScoreTable {
    pub fn new(ids: Vec<String>, y_true: Vec<f64>, y_pred: Vec<f64>) -> Result<Self, MetricsError> {
        if ids.len() != y_true.len() || ids.len() != y_pred.len() {
            return Err(MetricsError::LengthMismatch {
                ids: ids.len(),
                y_true: y_true.len(),
                y_pred: y_pred.len(),
            });
        }
        if ids.len() < 2 {
            return Err(MetricsError::TooShort(ids.len()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(MetricsError::DuplicateId(id.clone()));
            }
            if !y_true[i].is_finite() || !y_pred[i].is_finite() {
                return Err(MetricsError::NonFinite(id.clone()));
            }
        }
        Ok(Self { ids, y_true, y_pred })
    }

    /// Table with generated ids `0..n`.
    pub fn from_scores(y_true: Vec<f64>, y_pred: Vec<f64>) -> Result<Self, MetricsError> {
        let ids = (0..y_true.len()).map(|i| i.to_string()).collect();
        Self::new(ids, y_true, y_pred)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn y_true(&self) -> &[f64] {
        &self.y_true
    }

    pub fn y_pred(&self) -> &[f64] {
        &self.y_pred
    }
}

/// Sample Pearson correlation of two equally long vectors.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    assert_eq!(x.len(), y.len(), "pearson needs equal lengths");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance("y_true"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ZeroVariance("y_pred"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean((i+1)..=j)
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

pub fn pcc(t: &ScoreTable) -> Result<f64, MetricsError> {
    pearson(&t.y_true, &t.y_pred)
}

pub fn srcc(t: &ScoreTable) -> Result<f64, MetricsError> {
    pearson(&average_ranks(&t.y_true), &average_ranks(&t.y_pred))
}

/// Percentage of pairs on the same side of `threshold` (`>=` is positive).
pub fn binary_accuracy(t: &ScoreTable, threshold: f64) -> f64 {
    let hits = t
        .y_true
        .iter()
        .zip(&t.y_pred)
        .filter(|(a, b)| (**a >= threshold) == (**b >= threshold))
        .count();
    hits as f64 * 100.0 / t.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub pcc: f64,
    pub srcc: f64,
    pub accuracy_percent: f64,
    pub threshold: f64,
}

pub fn evaluate(t: &ScoreTable, threshold: f64) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        n: t.len(),
        pcc: pcc(t)?,
        srcc: srcc(t)?,
        accuracy_percent: binary_accuracy(t, threshold),
        threshold,
    })
}

/// Maps `value` from `[min, max]` onto `[0, 1]`.
pub fn normalize_score(value: f64, (min, max): (f64, f64)) -> f64 {
    (value - min) / (max - min)
}

pub fn check_scale((min, max): (f64, f64)) -> Result<(), MetricsError> {
    if !(min.is_finite() && max.is_finite() && min < max) {
        return Err(MetricsError::InvalidScale(min, max));
    }
    Ok(())
}

#[derive(Deserialize)]
struct Row {
    id: String,
    y_true: f64,
    y_pred: f64,
}

/// Parses `id,y_true,y_pred` CSV and normalizes both columns from `scale`.
pub fn read_score_csv<R: Read>(reader: R, scale: (f64, f64)) -> Result<ScoreTable, MetricsError> {
    check_scale(scale)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["id", "y_true", "y_pred"] {
        return Err(MetricsError::Header(header.join(",")));
    }
    let (mut ids, mut yt, mut yp) = (Vec::new(), Vec::new(), Vec::new());
    for row in rdr.deserialize() {
        let row: Row = row?;
        for v in [row.y_true, row.y_pred] {
            if !v.is_finite() {
                return Err(MetricsError::NonFinite(row.id));
            }
            if v < scale.0 || v > scale.1 {
                return Err(MetricsError::OutOfScale {
                    id: row.id,
                    value: v,
                    min: scale.0,
                    max: scale.1,
                });
            }
        }
        yt.push(normalize_score(row.y_true, scale));
        yp.push(normalize_score(row.y_pred, scale));
        ids.push(row.id);
    }
    ScoreTable::new(ids, yt, yp)
}

pub fn read_score_csv_file(path: &Path, scale: (f64, f64)) -> Result<ScoreTable, MetricsError> {
    let f = std::fs::File::open(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_score_csv(f, scale)
}

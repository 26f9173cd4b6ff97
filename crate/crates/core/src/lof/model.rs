use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::score::{LofScorer, Query};
use super::{LofError, LofParams};
use crate::canonical;
use crate::protocol::ModelUpdatePayload;

pub const DEFAULT_CAPACITY: usize = 512;

/// Capacity-bounded reference points, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    points: Vec<Vec<f64>>,
    capacity: usize,
    dim: usize,
}

impl ReferenceSet {
    pub fn new(dim: usize, capacity: usize) -> Self {
        ReferenceSet {
            points: Vec::new(),
            capacity,
            dim,
        }
    }

    /// Keeps the newest `capacity` points when given more.
    pub fn from_points(points: Vec<Vec<f64>>, capacity: usize) -> Result<Self, LofError> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(LofError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let skip = points.len().saturating_sub(capacity);
        Ok(ReferenceSet {
            points: points.into_iter().skip(skip).collect(),
            capacity,
            dim,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Appends and evicts the oldest point when over capacity.
    pub fn push(&mut self, point: Vec<f64>) {
        debug_assert_eq!(point.len(), self.dim);
        self.points.push(point);
        if self.points.len() > self.capacity {
            let excess = self.points.len() - self.capacity;
            self.points.drain(..excess);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub score: f64,
    pub is_anomaly: bool,
}

/// A versioned LOF model. Shared as `Arc<ModelSnapshot>`; admission goes
/// through [`ModelSnapshot::maybe_admit`], which copies on write.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSnapshot {
    pub version: u64,
    pub params: LofParams,
    pub reference: ReferenceSet,
    pub threshold: f64,
    pub admit_below: f64,
}

pub fn default_admit_below(threshold: f64) -> f64 {
    1.0 + 0.5 * (threshold - 1.0)
}

impl ModelSnapshot {
    pub fn new(
        version: u64,
        params: LofParams,
        reference: ReferenceSet,
        threshold: f64,
        admit_below: Option<f64>,
    ) -> Result<Self, LofError> {
        let snap = ModelSnapshot {
            version,
            params,
            reference,
            threshold,
            admit_below: admit_below.unwrap_or_else(|| default_admit_below(threshold)),
        };
        snap.validate()?;
        Ok(snap)
    }

    pub fn validate(&self) -> Result<(), LofError> {
        self.params.validate()?;
        if !(self.threshold.is_finite() && self.threshold >= 1.0) {
            return Err(LofError::InvalidModel(format!(
                "threshold must be >= 1, got {}",
                self.threshold
            )));
        }
        if !(self.admit_below > 0.0 && self.admit_below <= self.threshold) {
            return Err(LofError::InvalidModel(format!(
                "admit_below {} must be in (0, threshold]",
                self.admit_below
            )));
        }
        if self.reference.capacity() < self.params.k + 1 {
            return Err(LofError::InvalidModel(format!(
                "capacity {} must be >= k+1 = {}",
                self.reference.capacity(),
                self.params.k + 1
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn can_score(&self) -> bool {
        self.reference.len() > self.params.k
    }

    pub fn score(&self, features: &[f64]) -> Result<f64, LofError> {
        if features.len() != self.dim() {
            return Err(LofError::DimensionMismatch {
                expected: self.dim(),
                got: features.len(),
            });
        }
        LofScorer::new(self.reference.points(), self.params)?.score(Query::External(features))
    }

    /// Scores a feature vector; anomalous iff `score > threshold`.
    pub fn score_window(&self, features: &[f64]) -> Result<Scored, LofError> {
        let score = self.score(features)?;
        Ok(Scored {
            score,
            is_anomaly: score > self.threshold,
        })
    }

    /// Admits `features` iff `score < admit_below`. Returns whether it did.
    pub fn maybe_admit(this: &mut Arc<ModelSnapshot>, features: &[f64], score: f64) -> bool {
        if score < this.admit_below && features.len() == this.dim() {
            Arc::make_mut(this).reference.push(features.to_vec());
            true
        } else {
            false
        }
    }

    pub fn admit_unconditionally(this: &mut Arc<ModelSnapshot>, features: &[f64]) {
        Arc::make_mut(this).reference.push(features.to_vec());
    }

    /// Builds a snapshot from a pushed update. Rejects dimension mismatches
    /// and reference sets too small to score (`|points| <= k`).
    pub fn from_update(update: &ModelUpdatePayload, dim: usize, capacity: usize) -> Result<Self, LofError> {
        let params = LofParams {
            k: update.k,
            eps: update.eps,
        };
        if update.reference_points.len() <= update.k {
            return Err(LofError::InsufficientData {
                needed: update.k + 1,
                available: update.reference_points.len(),
            });
        }
        let reference = ReferenceSet::from_points(update.reference_points.clone(), capacity.max(update.k + 1))?;
        if reference.dim() != dim {
            return Err(LofError::DimensionMismatch {
                expected: dim,
                got: reference.dim(),
            });
        }
        ModelSnapshot::new(update.model_version, params, reference, update.threshold, None)
    }

    pub fn to_update(&self) -> ModelUpdatePayload {
        ModelUpdatePayload {
            model_version: self.version,
            k: self.params.k,
            threshold: self.threshold,
            reference_points: self.reference.points().to_vec(),
            eps: self.params.eps,
        }
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            model_version: self.version,
            k: self.params.k,
            threshold: self.threshold,
            reference_points: self.reference.points().to_vec(),
            eps: self.params.eps,
            admit_below: self.admit_below,
        }
    }

    pub fn from_file(file: &ModelFile, capacity: usize) -> Result<Self, LofError> {
        let reference = ReferenceSet::from_points(file.reference_points.clone(), capacity)?;
        ModelSnapshot::new(
            file.model_version,
            LofParams {
                k: file.k,
                eps: file.eps,
            },
            reference,
            file.threshold,
            Some(file.admit_below),
        )
    }

    /// Writes `model-v<version>` into `dir` (via a temp file and rename).
    pub fn save(&self, dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(model_file_name(self.version));
        let tmp = dir.join(format!(".{}.tmp", model_file_name(self.version)));
        let line = canonical::to_framed_line(&self.to_file()).map_err(io::Error::other)?;
        fs::write(&tmp, line)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load(path: &Path, capacity: usize) -> Result<Self, LofError> {
        let text = fs::read_to_string(path).map_err(|e| LofError::Io(e.to_string()))?;
        let file: ModelFile = canonical::from_line(&text).map_err(|e| LofError::InvalidModel(e.to_string()))?;
        ModelSnapshot::from_file(&file, capacity)
    }
}

/// On-disk model: the wire `ModelUpdatePayload` fields plus `admit_below`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub model_version: u64,
    pub k: usize,
    pub threshold: f64,
    pub reference_points: Vec<Vec<f64>>,
    pub eps: f64,
    pub admit_below: f64,
}

pub fn model_file_name(version: u64) -> String {
    format!("model-v{version}")
}

/// Highest-versioned `model-v<N>` file in `dir`, if any.
pub fn latest_model_file(dir: &Path) -> io::Result<Option<(u64, PathBuf)>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(v) = name
            .to_str()
            .and_then(|n| n.strip_prefix("model-v"))
            .and_then(|v| v.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, entry.path()));
        }
    }
    Ok(best)
}

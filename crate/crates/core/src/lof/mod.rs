//! Local Outlier Factor scoring, the online reference model, threshold
//! calibration and rule extraction.

mod model;
mod rules;
mod score;
mod threshold;

pub use model::{
    default_admit_below, latest_model_file, model_file_name, ModelFile, ModelSnapshot, ReferenceSet, Scored,
    DEFAULT_CAPACITY,
};
pub use rules::{extract_rule, rule_id, DetectionRule, RuleExtractor};
pub use score::{euclidean, k_distance, knn, lof, LofScorer, Neighborhood, Query};
pub use threshold::{calibrate_threshold, quantile, MIN_CALIBRATION_SCORES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LofError {
    #[error("insufficient data: need at least {needed} points, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("model i/o: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LofParams {
    pub k: usize,
    /// Lower clamp applied to every distance and reach-distance.
    pub eps: f64,
}

impl Default for LofParams {
    fn default() -> Self {
        LofParams { k: 5, eps: 1e-9 }
    }
}

impl LofParams {
    pub fn validate(&self) -> Result<(), LofError> {
        if self.k < 1 {
            return Err(LofError::InvalidParams("k must be >= 1".into()));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(LofError::InvalidParams(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

//! Failure prediction: nearest fault signature for the cause, a linear
//! score trend for the time to failure.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lof::euclidean;

/// Number of most recent events fitted for the time-to-failure estimate.
pub const TREND_WINDOW: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OrderAction {
    Inspect,
    Replace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub cause: String,
    pub part: String,
    pub action: OrderAction,
    pub signature: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("fault catalog: {0}")]
    Catalog(String),
    #[error("no anomaly events for equipment `{0}`")]
    NoData(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CatalogEntry>", into = "Vec<CatalogEntry>")]
pub struct FaultCatalog {
    entries: Vec<CatalogEntry>,
}

impl TryFrom<Vec<CatalogEntry>> for FaultCatalog {
    type Error = PredictError;

    fn try_from(entries: Vec<CatalogEntry>) -> Result<Self, Self::Error> {
        FaultCatalog::new(entries)
    }
}

impl From<FaultCatalog> for Vec<CatalogEntry> {
    fn from(c: FaultCatalog) -> Self {
        c.entries
    }
}

impl FaultCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self, PredictError> {
        if entries.is_empty() {
            return Err(PredictError::Catalog("catalog is empty".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.cause == e.cause) {
                return Err(PredictError::Catalog(format!("duplicate cause `{}`", e.cause)));
            }
            if e.signature.len() != entries[0].signature.len() {
                return Err(PredictError::Catalog("signatures differ in dimension".into()));
            }
        }
        Ok(FaultCatalog { entries })
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn by_cause(&self, cause: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.cause == cause)
    }

    /// Nearest entry and the confidence `1 / (1 + d1/d2)`, where `d1`, `d2`
    /// are the nearest and second-nearest signature distances. Ties keep
    /// catalog order; a one-entry catalog has confidence 1.
    pub fn classify(&self, features: &[f64]) -> (&CatalogEntry, f64) {
        let mut ranked: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, euclidean(&e.signature, features)))
            .collect();
        // stable sort keeps catalog order among equal distances
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &self.entries[ranked[0].0];
        let confidence = match ranked.get(1) {
            None => 1.0,
            Some(&(_, d2)) if d2 == 0.0 => 0.5,
            Some(&(_, d2)) => 1.0 / (1.0 + ranked[0].1 / d2),
        };
        (best, confidence)
    }
}

/// Predicted windows until the score reaches the critical level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eta {
    Windows(f64),
    Imminent,
    /// No upward trend: no failure time can be extrapolated.
    Unbounded,
}

impl fmt::Display for Eta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Eta::Windows(w) => write!(f, "{w:.1} windows"),
            Eta::Imminent => f.write_str("imminent"),
            Eta::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for Eta {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Eta::Windows(w) => s.serialize_f64(*w),
            Eta::Imminent => s.serialize_str("imminent"),
            Eta::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Eta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Label(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(w) => Ok(Eta::Windows(w)),
            Repr::Label(l) if l == "imminent" => Ok(Eta::Imminent),
            Repr::Label(l) if l == "unbounded" => Ok(Eta::Unbounded),
            Repr::Label(l) => Err(de::Error::custom(format!("unknown eta `{l}`"))),
        }
    }
}

/// Least-squares slope and intercept of `y` on `x`; `None` when undefined.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Extrapolates `(window_index, score)` history (oldest first) to
/// `critical`. Uses at most the last [`TREND_WINDOW`] points.
pub fn estimate_eta(history: &[(u64, f64)], critical: f64) -> Eta {
    let Some(&(last_w, last_score)) = history.last() else {
        return Eta::Unbounded;
    };
    if last_score >= critical {
        return Eta::Imminent;
    }
    let tail = &history[history.len().saturating_sub(TREND_WINDOW)..];
    let pts: Vec<(f64, f64)> = tail.iter().map(|&(w, s)| (w as f64, s)).collect();
    match linear_fit(&pts) {
        Some((slope, intercept)) if slope.is_finite() && slope > 0.0 => {
            let fitted = intercept + slope * last_w as f64;
            let eta = (critical - fitted) / slope;
            if eta <= 0.0 {
                Eta::Imminent
            } else {
                Eta::Windows(eta)
            }
        }
        _ => Eta::Unbounded,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailurePrediction {
    pub prediction_id: String,
    pub equipment_id: String,
    pub cause: String,
    pub part: String,
    pub action: OrderAction,
    pub confidence: f64,
    pub eta_windows: Eta,
    pub latest_score: f64,
    pub score_critical: f64,
    pub alert_id: String,
    pub created_at_ms: u64,
}

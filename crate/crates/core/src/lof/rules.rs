//! Hyper-rectangle detection rules extracted from anomaly streaks.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::protocol::RuleProposalPayload;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRule {
    pub rule_id: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub min_score: f64,
    pub support_count: u64,
}

impl DetectionRule {
    /// Inclusive box membership plus the score floor.
    pub fn matches(&self, features: &[f64], score: f64) -> bool {
        features.len() == self.lower.len()
            && score >= self.min_score
            && features
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| lo <= x && x <= hi)
    }

    pub fn to_proposal(&self) -> RuleProposalPayload {
        RuleProposalPayload {
            rule_id: self.rule_id.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            min_score: self.min_score,
            support_count: self.support_count,
        }
    }
}

fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

/// Content hash of a rule: SHA-256 of
/// `lower=<l0>,<l1>,…;upper=<u0>,…;min_score=<s>` with every real printed to
/// six decimals (`-0.000000` normalized to `0.000000`), truncated to the
/// first 16 lowercase hex digits.
pub fn rule_id(lower: &[f64], upper: &[f64], min_score: f64) -> String {
    let join = |v: &[f64]| v.iter().map(|&x| fixed6(x)).collect::<Vec<_>>().join(",");
    let canonical = format!(
        "lower={};upper={};min_score={}",
        join(lower),
        join(upper),
        fixed6(min_score)
    );
    let digest = Sha256::digest(canonical.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds a rule from the last `m` anomalous `(features, score)` pairs.
///
/// Bounds are `[min - margin·range, max + margin·range]` per component, with
/// a zero range replaced by `eps`. Returns `None` when fewer than `m` pairs
/// are supplied.
pub fn extract_rule(streak: &[(Vec<f64>, f64)], m: usize, margin: f64, eps: f64) -> Option<DetectionRule> {
    if m == 0 || streak.len() < m {
        return None;
    }
    let window = &streak[streak.len() - m..];
    let dim = window[0].0.len();
    if window.iter().any(|(f, _)| f.len() != dim) {
        return None;
    }
    let mut lower = Vec::with_capacity(dim);
    let mut upper = Vec::with_capacity(dim);
    for d in 0..dim {
        let (lo, hi) = window
            .iter()
            .map(|(f, _)| f[d])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        let range = if hi > lo { hi - lo } else { eps };
        lower.push(lo - margin * range);
        upper.push(hi + margin * range);
    }
    let min_score = window.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
    Some(DetectionRule {
        rule_id: rule_id(&lower, &upper, min_score),
        lower,
        upper,
        min_score,
        support_count: m as u64,
    })
}

/// Tracks consecutive anomalous windows and emits a rule every time the
/// streak reaches `m`; the streak then starts over.
#[derive(Clone, Debug)]
pub struct RuleExtractor {
    m: usize,
    margin: f64,
    eps: f64,
    streak: Vec<(Vec<f64>, f64)>,
}

impl RuleExtractor {
    pub fn new(m: usize, margin: f64, eps: f64) -> Self {
        RuleExtractor {
            m: m.max(1),
            margin,
            eps,
            streak: Vec::with_capacity(m),
        }
    }

    pub fn streak_len(&self) -> usize {
        self.streak.len()
    }

    pub fn reset(&mut self) {
        self.streak.clear();
    }

    pub fn observe(&mut self, features: &[f64], score: f64, is_anomaly: bool) -> Option<DetectionRule> {
        if !is_anomaly {
            self.streak.clear();
            return None;
        }
        self.streak.push((features.to_vec(), score));
        if self.streak.len() < self.m {
            return None;
        }
        let rule = extract_rule(&self.streak, self.m, self.margin, self.eps);
        self.streak.clear();
        rule
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn streak(v: &[[f64; 2]]) -> Vec<(Vec<f64>, f64)> {
        v.iter().enumerate().map(|(i, p)| (p.to_vec(), 2.0 + i as f64)).collect()
    }

    #[test]
    fn componentwise_bounds() {
        let r = extract_rule(&streak(&[[1.0, 10.0], [2.0, 12.0], [3.0, 11.0]]), 3, 0.0, 1e-9).unwrap();
        assert_eq!(r.lower, vec![1.0, 10.0]);
        assert_eq!(r.upper, vec![3.0, 12.0]);
        assert_eq!(r.min_score, 2.0);
        assert_eq!(r.support_count, 3);
    }

    #[test]
    fn margin_widens_and_degenerate_range_uses_eps() {
        let r = extract_rule(&streak(&[[1.0, 5.0], [3.0, 5.0]]), 2, 0.5, 0.25).unwrap();
        assert_eq!(r.lower, vec![0.0, 4.875]);
        assert_eq!(r.upper, vec![4.0, 5.125]);
    }

    #[test]
    fn too_short_streak() {
        assert!(extract_rule(&streak(&[[1.0, 1.0], [2.0, 2.0]]), 3, 0.0, 1e-9).is_none());
    }

    #[test]
    fn streak_resets_on_normal_window() {
        let mut ex = RuleExtractor::new(3, 0.0, 1e-9);
        assert!(ex.observe(&[1.0], 3.0, true).is_none());
        assert!(ex.observe(&[1.0], 3.0, true).is_none());
        assert!(ex.observe(&[1.0], 0.9, false).is_none());
        assert!(ex.observe(&[1.0], 3.0, true).is_none());
        assert!(ex.observe(&[1.0], 3.0, true).is_none());
        assert!(ex.observe(&[1.0], 3.0, true).is_some());
        assert_eq!(ex.streak_len(), 0);
    }

    #[test]
    fn rule_id_is_content_addressed() {
        let a = rule_id(&[1.0, 2.0], &[3.0, 4.0], 1.5);
        assert_eq!(a.len(), 16);
        assert_eq!(a, rule_id(&[1.0000001, 2.0], &[3.0, 4.0], 1.5));
        assert_ne!(a, rule_id(&[1.00001, 2.0], &[3.0, 4.0], 1.5));
        assert_eq!(rule_id(&[-0.0], &[0.0], 0.0), rule_id(&[0.0], &[0.0], 0.0));
    }

    #[test]
    fn matches_is_inclusive() {
        let r = extract_rule(&streak(&[[1.0, 10.0], [3.0, 12.0]]), 2, 0.0, 1e-9).unwrap();
        assert!(r.matches(&[1.0, 12.0], 2.0));
        assert!(!r.matches(&[1.0, 12.0], 1.99));
        assert!(!r.matches(&[0.99, 11.0], 5.0));
        assert!(!r.matches(&[2.0], 5.0));
    }
}

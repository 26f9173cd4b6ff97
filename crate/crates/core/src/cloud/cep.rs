//! CEP-style rule set: hyper-rectangle predicates over feature vectors,
//! edge-proposed rules merged by id and by box overlap.

use serde::{Deserialize, Serialize};

use crate::protocol::RuleProposalPayload;

/// Proposals whose box overlaps an existing edge rule at least this much
/// (intersection volume / union volume) are merged into it.
pub const MERGE_JACCARD: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleSource {
    EdgeProposed,
    CloudAuthored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CepRule {
    pub rule_id: String,
    pub source: RuleSource,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub min_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equipment: Option<String>,
    pub enabled: bool,
    pub support_count: u64,
    /// Ids of proposals folded into this rule.
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl CepRule {
    pub fn from_proposal(p: &RuleProposalPayload) -> Self {
        CepRule {
            rule_id: p.rule_id.clone(),
            source: RuleSource::EdgeProposed,
            lower: p.lower.clone(),
            upper: p.upper.clone(),
            min_score: p.min_score,
            equipment: None,
            enabled: true,
            support_count: p.support_count,
            aliases: Vec::new(),
        }
    }

    pub fn matches(&self, equipment_id: &str, features: &[f64], score: f64) -> bool {
        self.enabled
            && self.equipment.as_deref().is_none_or(|e| e == equipment_id)
            && features.len() == self.lower.len()
            && score >= self.min_score
            && features
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| lo <= x && x <= hi)
    }

    fn knows(&self, id: &str) -> bool {
        self.rule_id == id || self.aliases.iter().any(|a| a == id)
    }

    fn widen_to(&mut self, lower: &[f64], upper: &[f64], min_score: f64) {
        for (a, b) in self.lower.iter_mut().zip(lower) {
            *a = a.min(*b);
        }
        for (a, b) in self.upper.iter_mut().zip(upper) {
            *a = a.max(*b);
        }
        self.min_score = self.min_score.min(min_score);
    }
}

/// Jaccard index of two axis-aligned boxes. Dimensions in which both boxes
/// are the same single point are ignored; if every dimension is ignored the
/// boxes are identical and the index is 1. A box with zero extent in any
/// remaining dimension has zero volume and overlaps nothing.
pub fn box_jaccard(a_lo: &[f64], a_hi: &[f64], b_lo: &[f64], b_hi: &[f64]) -> f64 {
    if a_lo.len() != b_lo.len() || a_lo.len() != a_hi.len() || b_lo.len() != b_hi.len() {
        return 0.0;
    }
    // log-volumes keep wide 9-D boxes away from overflow
    let (mut log_a, mut log_b, mut log_i) = (0.0f64, 0.0f64, 0.0f64);
    let mut counted = 0;
    for d in 0..a_lo.len() {
        let wa = a_hi[d] - a_lo[d];
        let wb = b_hi[d] - b_lo[d];
        if wa == 0.0 && wb == 0.0 && a_lo[d] == b_lo[d] {
            continue;
        }
        let wi = a_hi[d].min(b_hi[d]) - a_lo[d].max(b_lo[d]);
        if wa <= 0.0 || wb <= 0.0 || wi <= 0.0 {
            return 0.0;
        }
        log_a += wa.ln();
        log_b += wb.ln();
        log_i += wi.ln();
        counted += 1;
    }
    if counted == 0 {
        return 1.0;
    }
    // I / (A + B - I) = 1 / (A/I + B/I - 1)
    let denom = (log_a - log_i).exp() + (log_b - log_i).exp() - 1.0;
    (1.0 / denom).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MergeOutcome {
    /// The proposal id was already known; its support was incremented.
    Incremented { rule_id: String },
    /// An overlapping edge rule was widened to cover the proposal (and any
    /// rules it then overlapped, listed in `absorbed`).
    Widened { rule_id: String, absorbed: Vec<String> },
    Inserted { rule_id: String },
}

impl MergeOutcome {
    pub fn rule_id(&self) -> &str {
        match self {
            MergeOutcome::Incremented { rule_id }
            | MergeOutcome::Widened { rule_id, .. }
            | MergeOutcome::Inserted { rule_id } => rule_id,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RuleSet {
    rules: Vec<CepRule>,
}

impl RuleSet {
    pub fn new() -> Self {
        RuleSet::default()
    }

    pub fn from_rules(rules: Vec<CepRule>) -> Self {
        RuleSet { rules }
    }

    pub fn rules(&self) -> &[CepRule] {
        &self.rules
    }

    pub fn get(&self, id: &str) -> Option<&CepRule> {
        self.rules.iter().find(|r| r.knows(id))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Ids of every enabled rule matching the event.
    pub fn evaluate(&self, equipment_id: &str, features: &[f64], score: f64) -> Vec<String> {
        self.rules
            .iter()
            .filter(|r| r.matches(equipment_id, features, score))
            .map(|r| r.rule_id.clone())
            .collect()
    }

    pub fn add_cloud_rule(&mut self, mut rule: CepRule) -> Result<(), String> {
        if self.get(&rule.rule_id).is_some() {
            return Err(format!("rule {} already exists", rule.rule_id));
        }
        if rule.lower.len() != rule.upper.len() || rule.lower.iter().zip(&rule.upper).any(|(l, u)| l > u) {
            return Err("invalid rule bounds".into());
        }
        rule.source = RuleSource::CloudAuthored;
        self.rules.push(rule);
        Ok(())
    }

    pub fn merge(&mut self, p: &RuleProposalPayload) -> MergeOutcome {
        if let Some(r) = self.rules.iter_mut().find(|r| r.knows(&p.rule_id)) {
            r.support_count += p.support_count;
            return MergeOutcome::Incremented {
                rule_id: r.rule_id.clone(),
            };
        }
        let overlapping = self.rules.iter().position(|r| {
            r.source == RuleSource::EdgeProposed
                && box_jaccard(&r.lower, &r.upper, &p.lower, &p.upper) >= MERGE_JACCARD
        });
        let Some(idx) = overlapping else {
            let rule = CepRule::from_proposal(p);
            let rule_id = rule.rule_id.clone();
            self.rules.push(rule);
            return MergeOutcome::Inserted { rule_id };
        };
        {
            let r = &mut self.rules[idx];
            r.widen_to(&p.lower, &p.upper, p.min_score);
            r.support_count += p.support_count;
            r.aliases.push(p.rule_id.clone());
        }
        let absorbed = self.absorb_overlaps(idx);
        let rule_id = self.rules.iter().find(|r| r.knows(&p.rule_id)).unwrap().rule_id.clone();
        MergeOutcome::Widened { rule_id, absorbed }
    }

    /// After widening rule `idx`, folds in any other edge rule it now
    /// overlaps at the merge threshold, repeating until stable.
    fn absorb_overlaps(&mut self, mut idx: usize) -> Vec<String> {
        let mut absorbed = Vec::new();
        loop {
            let target = &self.rules[idx];
            let other = self.rules.iter().enumerate().position(|(j, r)| {
                j != idx
                    && r.source == RuleSource::EdgeProposed
                    && box_jaccard(&target.lower, &target.upper, &r.lower, &r.upper) >= MERGE_JACCARD
            });
            let Some(j) = other else {
                return absorbed;
            };
            let gone = self.rules.remove(j);
            if j < idx {
                idx -= 1;
            }
            let r = &mut self.rules[idx];
            r.widen_to(&gone.lower, &gone.upper, gone.min_score);
            r.support_count += gone.support_count;
            r.aliases.push(gone.rule_id.clone());
            r.aliases.extend(gone.aliases);
            absorbed.push(gone.rule_id);
        }
    }
}

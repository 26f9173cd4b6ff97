//! Batch-layer retraining from uploaded raw records.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lof::{
    calibrate_threshold, quantile, LofError, LofParams, LofScorer, ModelSnapshot, Query, ReferenceSet,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainParams {
    pub k: usize,
    pub eps: f64,
    pub capacity: usize,
    /// Records scoring at or below this quantile form the normal pool.
    pub normal_quantile: f64,
    pub threshold_quantile: f64,
    pub threshold_factor: f64,
    pub min_records: usize,
}

impl Default for RetrainParams {
    fn default() -> Self {
        RetrainParams {
            k: 5,
            eps: 1e-9,
            capacity: 512,
            normal_quantile: 0.95,
            threshold_quantile: 0.99,
            threshold_factor: 1.2,
            min_records: 200,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrainError {
    #[error("retrain needs at least {needed} records, have {available}")]
    TooFewRecords { needed: usize, available: usize },
    #[error(transparent)]
    Lof(#[from] LofError),
}

/// Diagnostics returned alongside the new snapshot.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrainSummary {
    pub version: u64,
    pub records: usize,
    pub normal_pool: usize,
    pub reference_size: usize,
    pub normal_cutoff: f64,
    pub threshold: f64,
}

fn sorted_sample(rng: &mut ChaCha8Rng, n: usize, amount: usize) -> Vec<usize> {
    let mut idx = index::sample(rng, n, amount.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Rebuilds a model from an edge's raw feature vectors:
///
/// 1. score every record by LOF against a seeded uniform sample (capacity
///    sized) of the records themselves;
/// 2. keep the records scoring at or below the normal quantile as the
///    normal pool and sample the new reference set from it;
/// 3. calibrate the threshold on the normal-pool scores;
/// 4. bump the version.
pub fn retrain(
    records: &[Vec<f64>],
    previous_version: u64,
    params: &RetrainParams,
    seed: u64,
) -> Result<(ModelSnapshot, RetrainSummary), RetrainError> {
    if records.len() < params.min_records.max(params.k + 2) {
        return Err(RetrainError::TooFewRecords {
            needed: params.min_records.max(params.k + 2),
            available: records.len(),
        });
    }
    let lof = LofParams {
        k: params.k,
        eps: params.eps,
    };
    lof.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sample_idx = sorted_sample(&mut rng, records.len(), params.capacity);
    let sample: Vec<Vec<f64>> = sample_idx.iter().map(|&i| records[i].clone()).collect();
    let mut member_of = vec![None; records.len()];
    for (pos, &i) in sample_idx.iter().enumerate() {
        member_of[i] = Some(pos);
    }
    let mut scorer = LofScorer::new(&sample, lof)?;
    let scores: Vec<f64> = records
        .iter()
        .zip(&member_of)
        .map(|(r, m)| match m {
            Some(pos) => scorer.score(Query::Member(*pos)),
            None => scorer.score(Query::External(r)),
        })
        .collect::<Result<_, _>>()?;

    let cutoff = quantile(&scores, params.normal_quantile).expect("non-empty scores");
    let pool: Vec<usize> = (0..records.len()).filter(|&i| scores[i] <= cutoff).collect();
    let pool_scores: Vec<f64> = pool.iter().map(|&i| scores[i]).collect();
    let threshold = calibrate_threshold(&pool_scores, params.threshold_quantile, params.threshold_factor)?;

    let ref_idx = sorted_sample(&mut rng, pool.len(), params.capacity);
    let reference_points: Vec<Vec<f64>> = ref_idx.iter().map(|&j| records[pool[j]].clone()).collect();
    let reference = ReferenceSet::from_points(reference_points, params.capacity)?;
    let version = previous_version + 1;
    let summary = RetrainSummary {
        version,
        records: records.len(),
        normal_pool: pool.len(),
        reference_size: reference.len(),
        normal_cutoff: cutoff,
        threshold,
    };
    let snapshot = ModelSnapshot::new(version, lof, reference, threshold, None)?;
    Ok((snapshot, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn cluster(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| (0..3).map(|_| 10.0 + normal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn deterministic_for_a_seed() {
        let data = cluster(300, 1);
        let p = RetrainParams {
            capacity: 100,
            ..RetrainParams::default()
        };
        let (a, _) = retrain(&data, 3, &p, 42).unwrap();
        let (b, _) = retrain(&data, 3, &p, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.version, 4);
        let (c, _) = retrain(&data, 3, &p, 43).unwrap();
        assert_ne!(a.reference, c.reference);
    }

    #[test]
    fn refuses_small_batches() {
        let p = RetrainParams::default();
        assert_eq!(
            retrain(&cluster(199, 1), 0, &p, 1).unwrap_err(),
            RetrainError::TooFewRecords {
                needed: 200,
                available: 199
            }
        );
    }

    #[test]
    fn outliers_stay_out_of_reference() {
        let mut data = cluster(400, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..4 {
            let base = 100.0 * (i + 1) as f64;
            data.push((0..3).map(|_| base + rng.random_range(-20.0..20.0)).collect());
        }
        let (snap, summary) = retrain(&data, 0, &RetrainParams::default(), 5).unwrap();
        assert!(snap.reference.points().iter().all(|p| p[0] < 50.0));
        assert!(summary.normal_pool < data.len());
        assert!(snap.threshold >= 1.0);
    }
}

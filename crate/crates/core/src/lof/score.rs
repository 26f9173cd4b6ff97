//! Exact Local Outlier Factor over a reference set, by full scan.
//!
//! * `k-distance(o)`: distance from `o` to its k-th nearest *other* point.
//! * `N_k(o)`: every point within `k-distance(o)`; ties are kept, so
//!   `|N_k(o)| >= k`.
//! * `reach_k(p, o) = max(k-distance(o), d(p, o))`.
//! * `lrd_k(p) = |N_k(p)| / Σ_{o ∈ N_k(p)} reach_k(p, o)`.
//! * `LOF_k(p) = Σ_{o ∈ N_k(p)} lrd_k(o) / (|N_k(p)| · lrd_k(p))`.
//!
//! Every distance is clamped below by `eps`, which makes the score total on
//! sets with duplicate points (a cluster of duplicates scores exactly 1).

use super::{LofError, LofParams};

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The k-neighborhood of a point: its k-distance and every member within it,
/// as `(index into the set, clamped distance)` pairs in set order.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub k_distance: f64,
    pub members: Vec<(usize, f64)>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().map(|&(i, _)| i)
    }
}

/// Which point is being scored: an outside query, or the member at an index
/// (excluded from its own neighbor search).
#[derive(Clone, Copy, Debug)]
pub enum Query<'a> {
    External(&'a [f64]),
    Member(usize),
}

fn check_dims(set: &[Vec<f64>], query: Option<&[f64]>) -> Result<(), LofError> {
    let Some(first) = set.first() else {
        return Ok(());
    };
    let dim = first.len();
    if let Some(bad) = set.iter().find(|p| p.len() != dim) {
        return Err(LofError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    if let Some(q) = query {
        if q.len() != dim {
            return Err(LofError::DimensionMismatch {
                expected: dim,
                got: q.len(),
            });
        }
    }
    Ok(())
}

fn neighborhood_of(
    point: &[f64],
    exclude: Option<usize>,
    set: &[Vec<f64>],
    k: usize,
    eps: f64,
) -> Result<Neighborhood, LofError> {
    let mut dists: Vec<(usize, f64)> = set
        .iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != exclude)
        .map(|(i, o)| (i, euclidean(point, o).max(eps)))
        .collect();
    if k == 0 || dists.len() < k {
        return Err(LofError::InsufficientData {
            needed: k + usize::from(exclude.is_some()),
            available: set.len(),
        });
    }
    let mut sorted: Vec<f64> = dists.iter().map(|&(_, d)| d).collect();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, f64::total_cmp);
    let k_distance = *kth;
    dists.retain(|&(_, d)| d <= k_distance);
    Ok(Neighborhood {
        k_distance,
        members: dists,
    })
}

/// `N_k(p)` for a query against `set`.
pub fn knn(query: Query<'_>, set: &[Vec<f64>], params: &LofParams) -> Result<Neighborhood, LofError> {
    params.validate()?;
    match query {
        Query::External(p) => {
            check_dims(set, Some(p))?;
            neighborhood_of(p, None, set, params.k, params.eps)
        }
        Query::Member(i) => {
            check_dims(set, None)?;
            let p = set.get(i).ok_or(LofError::IndexOutOfRange(i))?;
            neighborhood_of(p, Some(i), set, params.k, params.eps)
        }
    }
}

pub fn k_distance(query: Query<'_>, set: &[Vec<f64>], params: &LofParams) -> Result<f64, LofError> {
    knn(query, set, params).map(|n| n.k_distance)
}

/// Lazily computed per-member neighborhoods, shared across one or many
/// queries against the same set.
pub struct LofScorer<'a> {
    set: &'a [Vec<f64>],
    params: LofParams,
    hoods: Vec<Option<Neighborhood>>,
    lrds: Vec<Option<f64>>,
}

impl<'a> LofScorer<'a> {
    pub fn new(set: &'a [Vec<f64>], params: LofParams) -> Result<Self, LofError> {
        params.validate()?;
        check_dims(set, None)?;
        if set.len() < params.k + 1 {
            return Err(LofError::InsufficientData {
                needed: params.k + 1,
                available: set.len(),
            });
        }
        Ok(LofScorer {
            set,
            params,
            hoods: vec![None; set.len()],
            lrds: vec![None; set.len()],
        })
    }

    fn member_hood(&mut self, i: usize) -> &Neighborhood {
        if self.hoods[i].is_none() {
            let hood = neighborhood_of(&self.set[i], Some(i), self.set, self.params.k, self.params.eps)
                .expect("set size checked in constructor");
            self.hoods[i] = Some(hood);
        }
        self.hoods[i].as_ref().unwrap()
    }

    fn member_k_distance(&mut self, i: usize) -> f64 {
        self.member_hood(i).k_distance
    }

    /// `lrd` of a point given its neighborhood.
    fn lrd_from(&mut self, hood: &Neighborhood) -> f64 {
        let reach: Vec<f64> = hood
            .members
            .iter()
            .map(|&(o, d)| self.member_k_distance(o).max(d).max(self.params.eps))
            .collect();
        // mean as an offset from the first term: exact when all terms agree
        let base = reach[0];
        let mean = base + reach.iter().map(|r| r - base).sum::<f64>() / reach.len() as f64;
        1.0 / mean
    }

    fn member_lrd(&mut self, i: usize) -> f64 {
        if let Some(v) = self.lrds[i] {
            return v;
        }
        let hood = self.member_hood(i).clone();
        let v = self.lrd_from(&hood);
        self.lrds[i] = Some(v);
        v
    }

    fn lof_from(&mut self, hood: &Neighborhood) -> f64 {
        let lrd_p = self.lrd_from(hood);
        // averaging ratios keeps equal densities at exactly 1.0
        let sum: f64 = hood.indices().map(|o| self.member_lrd(o) / lrd_p).sum();
        sum / hood.len() as f64
    }

    pub fn score(&mut self, query: Query<'_>) -> Result<f64, LofError> {
        let hood = match query {
            Query::External(p) => {
                check_dims(self.set, Some(p))?;
                neighborhood_of(p, None, self.set, self.params.k, self.params.eps)?
            }
            Query::Member(i) => {
                if i >= self.set.len() {
                    return Err(LofError::IndexOutOfRange(i));
                }
                self.member_hood(i).clone()
            }
        };
        Ok(self.lof_from(&hood))
    }

    /// LOF of every member of the set.
    pub fn score_members(&mut self) -> Vec<f64> {
        (0..self.set.len())
            .map(|i| self.score(Query::Member(i)).expect("member index in range"))
            .collect()
    }
}

/// One-shot LOF of a query against `set`.
pub fn lof(query: Query<'_>, set: &[Vec<f64>], params: &LofParams) -> Result<f64, LofError> {
    LofScorer::new(set, *params)?.score(query)
}

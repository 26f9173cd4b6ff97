//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use lambdapm_core::cloud::{CloudConfig, CloudService};
use lambdapm_core::sim::{cloud_config, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- LOF, straight from the definitions with plain loops ----

pub enum Q<'a> {
    Ext(&'a [f64]),
    Mem(usize),
}

fn dist(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt().max(eps)
}

/// (k-distance, neighbor indices) of point `p`, skipping index `skip`.
fn hood(set: &[Vec<f64>], p: &[f64], skip: Option<usize>, k: usize, eps: f64) -> (f64, Vec<usize>) {
    let mut all = Vec::new();
    for j in 0..set.len() {
        if Some(j) != skip {
            all.push(dist(p, &set[j], eps));
        }
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kd = all[k - 1];
    let mut n = Vec::new();
    for j in 0..set.len() {
        if Some(j) != skip && dist(p, &set[j], eps) <= kd {
            n.push(j);
        }
    }
    (kd, n)
}

fn lrd(set: &[Vec<f64>], p: &[f64], skip: Option<usize>, k: usize, eps: f64) -> f64 {
    let (_, n) = hood(set, p, skip, k, eps);
    let mut sum = 0.0;
    for &o in &n {
        let (kd_o, _) = hood(set, &set[o], Some(o), k, eps);
        sum += kd_o.max(dist(p, &set[o], eps)).max(eps);
    }
    n.len() as f64 / sum
}

pub fn brute_lof(set: &[Vec<f64>], q: Q<'_>, k: usize, eps: f64) -> f64 {
    let (p, skip): (&[f64], Option<usize>) = match q {
        Q::Ext(p) => (p, None),
        Q::Mem(i) => (&set[i], Some(i)),
    };
    let (_, n) = hood(set, p, skip, k, eps);
    let mut s = 0.0;
    for &o in &n {
        s += lrd(set, &set[o], Some(o), k, eps);
    }
    s / (n.len() as f64 * lrd(set, p, skip, k, eps))
}

// ---- spectra ----

/// One-sided `|X[m]|`, `m = 0..=N/2`, of the mean-removed window by the
/// O(N²) sum.
pub fn naive_dft_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    (0..=n / 2)
        .map(|m| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * ((m * t) % n) as f64 / n as f64;
                re += (v - mean) * a.cos();
                im += (v - mean) * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

// ---- order statistics ----

pub fn quantile_oracle(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = q * (s.len() as f64 - 1.0);
    let i = h as usize;
    if i + 1 >= s.len() {
        return s[s.len() - 1];
    }
    s[i] * (1.0 - (h - i as f64)) + s[i + 1] * (h - i as f64)
}

// ---- fixtures ----

pub fn uniform_points(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() * scale).collect()).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// A cloud with the demo scenario's catalog, stored in `dir/cloud`.
pub fn demo_cloud(dir: &Path) -> Arc<CloudService> {
    let cfg = ScenarioConfig::demo();
    Arc::new(CloudService::open(cloud_config(&cfg, dir).unwrap()).unwrap())
}

pub fn demo_cloud_config(dir: &Path) -> CloudConfig {
    cloud_config(&ScenarioConfig::demo(), dir).unwrap()
}

/// Random LOF instances (n <= 200, D <= 8, k <= 10) scored by the library
/// and by `brute_lof`; returns (queries checked, worst relative error).
pub fn lof_oracle_sweep(instances: usize, seed: u64) -> (usize, f64) {
    use lambdapm_core::lof::{LofParams, LofScorer, Query};
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..instances {
        let k = r.random_range(1..=10);
        let n = r.random_range(k + 2..=200);
        let d = r.random_range(1..=8);
        let set = uniform_points(&mut r, n, d, 10.0);
        let params = LofParams { k, eps: 1e-9 };
        let mut scorer = LofScorer::new(&set, params).unwrap();
        for _ in 0..2 {
            let i = r.random_range(0..n);
            let got = scorer.score(Query::Member(i)).unwrap();
            worst = worst.max(rel_err(got, brute_lof(&set, Q::Mem(i), k, 1e-9)));
            let q: Vec<f64> = (0..d).map(|_| r.random::<f64>() * 14.0 - 2.0).collect();
            let got = scorer.score(Query::External(&q)).unwrap();
            worst = worst.max(rel_err(got, brute_lof(&set, Q::Ext(&q), k, 1e-9)));
            checked += 2;
        }
    }
    (checked, worst)
}

pub fn unit_grid(side: usize) -> Vec<Vec<f64>> {
    let mut g = Vec::new();
    for i in 0..side {
        for j in 0..side {
            g.push(vec![i as f64, j as f64]);
        }
    }
    g
}

// ---- random envelopes ----

/// Any finite real, including subnormals, huge magnitudes and -0.0.
pub fn any_real(r: &mut ChaCha8Rng) -> f64 {
    match r.random_range(0..6) {
        0 => r.random::<f64>(),
        1 => -0.0,
        2 => r.random_range(-1e6..1e6),
        3 => f64::MIN_POSITIVE * r.random::<f64>(),
        _ => loop {
            let x = f64::from_bits(r.random());
            if x.is_finite() {
                return x;
            }
        },
    }
}

fn positive_real(r: &mut ChaCha8Rng) -> f64 {
    let x = any_real(r).abs();
    if x > 0.0 {
        x
    } else {
        f64::MIN_POSITIVE
    }
}

pub fn any_text(r: &mut ChaCha8Rng, min: usize) -> String {
    const SPECIAL: &[char] = &['"', '\\', '\n', '\r', '\t', '\u{0}', '\u{1f}', '/', 'é', '日', '\u{2028}', '🦀'];
    let len = r.random_range(min..12);
    (0..len)
        .map(|_| {
            if r.random_bool(0.3) {
                SPECIAL[r.random_range(0..SPECIAL.len())]
            } else {
                r.random_range('a'..='z')
            }
        })
        .collect()
}

fn reals(r: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| any_real(r)).collect()
}

pub fn random_envelope(r: &mut ChaCha8Rng) -> lambdapm_core::Envelope {
    use lambdapm_core::protocol::*;
    let dim = r.random_range(1..10);
    let payload = match r.random_range(0..5) {
        0 => Payload::Anomaly(AnomalyEventPayload {
            equipment_id: any_text(r, 1),
            window_index: r.random(),
            score: any_real(r).abs(),
            features: reals(r, dim),
            threshold_at_detection: positive_real(r),
            model_version: r.random(),
        }),
        1 => {
            let a = reals(r, dim);
            let b = reals(r, dim);
            let lower: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
            let upper: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect();
            Payload::RuleProposal(RuleProposalPayload {
                rule_id: any_text(r, 1),
                lower,
                upper,
                min_score: any_real(r),
                support_count: r.random_range(1..u64::MAX),
            })
        }
        2 => {
            let total = r.random_range(1..u32::MAX);
            let n = r.random_range(0..6);
            Payload::RawBatch(RawBatchChunkPayload {
                chunk_index: r.random_range(0..total),
                total_chunks: total,
                records: (0..n)
                    .map(|_| RawRecord {
                        window_index: r.random(),
                        features: reals(r, dim),
                        score: any_real(r),
                    })
                    .collect(),
                segment_id: any_text(r, 1),
            })
        }
        3 => {
            let n = r.random_range(1..5);
            Payload::ModelUpdate(ModelUpdatePayload {
                model_version: r.random(),
                k: r.random_range(1..usize::MAX),
                threshold: positive_real(r),
                reference_points: (0..n).map(|_| reals(r, dim)).collect(),
                eps: positive_real(r),
            })
        }
        _ => {
            let statuses = [AckStatus::Ok, AckStatus::Error, AckStatus::Accepted, AckStatus::Rejected];
            Payload::Ack(AckPayload {
                ack_topic: Topic::ALL[r.random_range(0..5)],
                ack_seq: r.random(),
                status: statuses[r.random_range(0..4)],
                detail: r.random_bool(0.5).then(|| any_text(r, 0)),
                active_version: r.random_bool(0.5).then(|| r.random()),
            })
        }
    };
    lambdapm_core::Envelope::new(any_text(r, 1), r.random(), r.random(), payload)
}

/// Encodes, decodes and re-encodes `count` random envelopes; returns the
/// number that failed to come back identical.
pub fn protocol_round_trips(count: usize, seed: u64) -> usize {
    use lambdapm_core::protocol::{decode, encode};
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..count {
        let env = random_envelope(&mut r);
        let line = encode(&env).unwrap();
        let ok = !line.contains('\n')
            && match decode(line.as_bytes()) {
                Ok(back) => {
                    back == env
                        && encode(&back).unwrap() == line
                        && same_bits(&back, &env)
                }
                Err(_) => false,
            };
        if !ok {
            bad += 1;
        }
    }
    bad
}

/// `PartialEq` treats 0.0 and -0.0 as equal; compare the reals bit for bit.
fn same_bits(a: &lambdapm_core::Envelope, b: &lambdapm_core::Envelope) -> bool {
    use lambdapm_core::protocol::Payload::*;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    match (&a.payload, &b.payload) {
        (Anomaly(x), Anomaly(y)) => {
            bits(&x.features) == bits(&y.features)
                && x.score.to_bits() == y.score.to_bits()
                && x.threshold_at_detection.to_bits() == y.threshold_at_detection.to_bits()
        }
        (RuleProposal(x), RuleProposal(y)) => {
            bits(&x.lower) == bits(&y.lower)
                && bits(&x.upper) == bits(&y.upper)
                && x.min_score.to_bits() == y.min_score.to_bits()
        }
        (RawBatch(x), RawBatch(y)) => x
            .records
            .iter()
            .zip(&y.records)
            .all(|(p, q)| bits(&p.features) == bits(&q.features) && p.score.to_bits() == q.score.to_bits()),
        (ModelUpdate(x), ModelUpdate(y)) => {
            x.reference_points.iter().zip(&y.reference_points).all(|(p, q)| bits(p) == bits(q))
                && x.threshold.to_bits() == y.threshold.to_bits()
                && x.eps.to_bits() == y.eps.to_bits()
        }
        (Ack(_), Ack(_)) => true,
        _ => false,
    }
}

/// Feeds `count` arbitrary and mutated byte strings to `decode`; returns
/// how many decoded successfully (the rest returned errors). A panic
/// propagates and fails the caller.
pub fn protocol_fuzz(count: usize, seed: u64) -> usize {
    use lambdapm_core::protocol::{decode, encode};
    let mut r = rng(seed);
    let mut accepted = 0;
    for i in 0..count {
        let bytes: Vec<u8> = if i % 2 == 0 {
            let len = r.random_range(0..200);
            (0..len).map(|_| r.random()).collect()
        } else {
            let mut b = encode(&random_envelope(&mut r)).unwrap().into_bytes();
            for _ in 0..r.random_range(1..4) {
                let at = r.random_range(0..b.len());
                match r.random_range(0..3) {
                    0 => b[at] = r.random(),
                    1 => b.truncate(at),
                    _ => {
                        b.remove(at);
                    }
                }
                if b.is_empty() {
                    break;
                }
            }
            b
        };
        if decode(&bytes).is_ok() {
            accepted += 1;
        }
    }
    accepted
}

// ---- an edge wired to an in-process cloud ----

use lambdapm_core::cloud::inproc::InProcLink;
use lambdapm_core::edge::{closed_segments, read_segment, CloudLink, EdgeAgent, EdgeConfig};
use lambdapm_core::protocol::RawRecord;
use lambdapm_core::sim::{edge_config, warm_start_model, EDGE_ID};

/// The demo signal over `windows` windows, with a foreign-object fault of
/// `len` windows at each `start`.
pub fn short_scenario(windows: u64, faults: &[(u64, u64)]) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::demo();
    let template = cfg.faults[0].clone();
    cfg.name = "short".into();
    cfg.duration_windows = windows;
    cfg.midpoint = None;
    cfg.faults = faults
        .iter()
        .map(|&(start, len)| lambdapm_core::sim::Fault {
            start_window: start,
            end_window: start + len - 1,
            ..template.clone()
        })
        .collect();
    cfg
}

pub struct Rig {
    pub cfg: ScenarioConfig,
    pub dir: tempfile::TempDir,
    pub cloud: Arc<CloudService>,
    pub edge: EdgeConfig,
}

impl Rig {
    pub fn new(cfg: ScenarioConfig) -> Rig {
        let dir = tempfile::tempdir().unwrap();
        let warm = warm_start_model(&cfg).unwrap();
        let path = warm.save(&dir.path().join("warm-start")).unwrap();
        let cloud = Arc::new(CloudService::open(cloud_config(&cfg, dir.path()).unwrap()).unwrap());
        cloud.note_edge_model(EDGE_ID, warm.version);
        let edge = edge_config(&cfg, dir.path(), path, "inproc".into());
        Rig { cfg, dir, cloud, edge }
    }

    pub fn agent(&self) -> EdgeAgent<InProcLink> {
        self.agent_with(InProcLink::new(self.cloud.clone()))
    }

    pub fn agent_with<L: CloudLink>(&self, link: L) -> EdgeAgent<L> {
        EdgeAgent::new(self.edge.clone(), link, lambdapm_core::fixed_clock(1_700_000_000_000)).unwrap()
    }

    /// Records in closed spool segments that have not been uploaded.
    pub fn spooled(&self) -> Vec<RawRecord> {
        closed_segments(&self.edge.spool_dir, &self.edge.edge_id)
            .unwrap()
            .iter()
            .flat_map(|s| read_segment(s).unwrap())
            .collect()
    }
}

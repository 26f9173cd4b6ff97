mod common;

use std::fs;

use common::{short_scenario, Rig};
use lambdapm_core::cloud::inproc::InProcLink;
use lambdapm_core::edge::{CloudLink, LinkError, WireStats};
use lambdapm_core::lof::{calibrate_threshold, LofParams, LofScorer, ModelSnapshot, ReferenceSet};
use lambdapm_core::protocol::{AckPayload, Envelope, Topic};
use lambdapm_core::cloud::DistributionStatus;
use lambdapm_core::sim::EDGE_ID;
use lambdapm_core::FeatureExtractor;

fn run(rig: &Rig) -> (Vec<lambdapm_core::edge::WindowOutcome>, WireStats) {
    let mut agent = rig.agent();
    let outcomes: Vec<_> = rig
        .cfg
        .generate()
        .iter()
        .enumerate()
        .map(|(w, s)| agent.process_window(w as u64, s).unwrap().unwrap())
        .collect();
    assert_eq!(agent.pending_events(), 0);
    let (_, link) = agent.shutdown().unwrap();
    (outcomes, link.stats().clone())
}

#[test]
fn normal_windows_send_nothing() {
    let rig = Rig::new(short_scenario(100, &[]));
    let (outcomes, wire) = run(&rig);
    assert_eq!(wire.get(Topic::Anomaly).messages, 0);
    assert_eq!(wire.get(Topic::RuleProposal).messages, 0);
    let spooled = rig.spooled();
    assert_eq!(spooled.len(), 100);
    let idx: Vec<u64> = spooled.iter().map(|r| r.window_index).collect();
    assert_eq!(idx, (0..100).collect::<Vec<_>>());
    // the resumed-free agent starts with warmup windows
    assert!(outcomes[..6].iter().all(|o| o.warmup && !o.is_anomaly));
    assert!(!outcomes[6].warmup);
}

#[test]
fn one_fault_window_one_event() {
    let rig = Rig::new(short_scenario(100, &[(50, 1)]));
    let (outcomes, wire) = run(&rig);
    assert_eq!(wire.get(Topic::Anomaly).messages, 1);
    assert_eq!(wire.get(Topic::RuleProposal).messages, 0);
    let flagged: Vec<u64> = outcomes.iter().filter(|o| o.is_anomaly).map(|o| o.window_index).collect();
    assert_eq!(flagged, vec![50]);
    let events = rig.cloud.events();
    assert_eq!(events.len(), 1);
}

#[test]
fn three_streak_proposes_one_rule() {
    let rig = Rig::new(short_scenario(100, &[(40, 3)]));
    let (outcomes, wire) = run(&rig);
    assert_eq!(wire.get(Topic::Anomaly).messages, 3);
    assert_eq!(wire.get(Topic::RuleProposal).messages, 1);
    let rule = outcomes[42].rule.clone().expect("rule on the third window");
    for o in &outcomes[40..43] {
        assert!(rule.matches(&o.features, o.score));
    }
    let cloud_rules = rig.cloud.rules();
    assert_eq!(cloud_rules.len(), 1);
    assert_eq!(cloud_rules[0].rule_id, rule.rule_id);
}

#[test]
fn filter_conservation() {
    let rig = Rig::new(short_scenario(300, &[(60, 5), (200, 2)]));
    let (outcomes, wire) = run(&rig);
    let flagged = outcomes.iter().filter(|o| o.is_anomaly).count() as u64;
    assert_eq!(wire.get(Topic::Anomaly).messages, flagged);
    assert_eq!(rig.spooled().len(), 300);
    let events = rig.cloud.events();
    assert!(events.iter().all(|e| outcomes[e.event.window_index as usize].is_anomaly));
    for e in &events {
        let o = &outcomes[e.event.window_index as usize];
        assert_eq!((e.event.score, e.event.model_version), (o.score, o.model_version));
    }
}

#[test]
fn upload_chunks_and_deletes() {
    let rig = Rig::new(short_scenario(1200, &[]));
    let mut agent = rig.agent();
    for (w, s) in rig.cfg.generate().iter().enumerate() {
        agent.process_window(w as u64, s).unwrap();
    }
    let report = agent.upload_batch().unwrap();
    assert!(report.is_complete());
    assert_eq!((report.segments_uploaded, report.records, report.chunks), (1, 1200, 3));
    let sent = agent.link().stats().get(Topic::RawBatch);
    assert_eq!(sent.messages, 3);
    assert!(rig.spooled().is_empty());
    assert_eq!(rig.cloud.raw_records(EDGE_ID).len(), 1200);

    // bandwidth dominance at a 0% anomaly rate is trivial; check the bytes anyway
    assert!(agent.link().stats().get(Topic::Anomaly).bytes <= sent.bytes);

    let again = agent.upload_batch().unwrap();
    assert!(again.is_complete());
    assert_eq!(again.segments_uploaded, 0);
}

#[test]
fn empty_spool_upload_is_a_no_op() {
    let rig = Rig::new(short_scenario(10, &[]));
    let mut agent = rig.agent();
    let report = agent.upload_batch().unwrap();
    assert!(report.is_complete());
    assert_eq!(report.chunks, 0);
}

/// Forwards to the cloud but loses the ACK of the `lose`-th RAW_BATCH chunk.
struct LossyLink {
    inner: InProcLink,
    raw_seen: usize,
    lose: usize,
}

impl CloudLink for LossyLink {
    fn request(&mut self, env: &Envelope) -> Result<AckPayload, LinkError> {
        let ack = self.inner.request(env)?;
        if env.topic == Topic::RawBatch {
            self.raw_seen += 1;
            if self.raw_seen == self.lose {
                return Err(LinkError::Timeout);
            }
        }
        Ok(ack)
    }

    fn send(&mut self, env: &Envelope) -> Result<(), LinkError> {
        self.inner.send(env)
    }

    fn poll_update(&mut self) -> Option<Envelope> {
        self.inner.poll_update()
    }

    fn stats(&self) -> &WireStats {
        self.inner.stats()
    }
}

#[test]
fn lost_final_ack_is_deduplicated() {
    let rig = Rig::new(short_scenario(1200, &[]));
    let link = LossyLink {
        inner: InProcLink::new(rig.cloud.clone()),
        raw_seen: 0,
        lose: 3,
    };
    let mut agent = rig.agent_with(link);
    for (w, s) in rig.cfg.generate().iter().enumerate() {
        agent.process_window(w as u64, s).unwrap();
    }
    let first = agent.upload_batch().unwrap();
    assert!(!first.is_complete());
    assert_eq!(first.segments_retained, 1);
    assert_eq!(rig.spooled().len(), 1200);
    // the cloud already stored the segment
    assert_eq!(rig.cloud.raw_records(EDGE_ID).len(), 1200);

    let second = agent.upload_batch().unwrap();
    assert!(second.is_complete());
    assert_eq!(second.segments_uploaded, 1);
    assert!(rig.spooled().is_empty());
    assert_eq!(rig.cloud.raw_records(EDGE_ID).len(), 1200);
    assert_eq!(rig.cloud.raw_segment_ids(EDGE_ID).len(), 1);
}

#[test]
fn lost_middle_ack_resends_the_segment() {
    let rig = Rig::new(short_scenario(1200, &[]));
    let link = LossyLink {
        inner: InProcLink::new(rig.cloud.clone()),
        raw_seen: 0,
        lose: 2,
    };
    let mut agent = rig.agent_with(link);
    for (w, s) in rig.cfg.generate().iter().enumerate() {
        agent.process_window(w as u64, s).unwrap();
    }
    assert!(!agent.upload_batch().unwrap().is_complete());
    assert!(agent.upload_batch().unwrap().is_complete());
    let idx: Vec<u64> = rig.cloud.raw_records(EDGE_ID).iter().map(|r| r.window_index).collect();
    assert_eq!(idx, (0..1200).collect::<Vec<_>>());
}

#[test]
fn offline_events_are_buffered_then_delivered() {
    let rig = Rig::new(short_scenario(100, &[(30, 2), (70, 1)]));
    let mut agent = rig.agent();
    agent.link_mut().disconnect();
    let windows = rig.cfg.generate();
    for (w, s) in windows.iter().enumerate().take(80) {
        agent.process_window(w as u64, s).unwrap();
    }
    assert_eq!(agent.pending_events(), 3);
    assert_eq!(rig.cloud.event_count(), 0);
    agent.link_mut().reconnect();
    assert_eq!(agent.flush_pending(), 3);
    let got: Vec<u64> = rig.cloud.events().iter().map(|e| e.event.window_index).collect();
    assert_eq!(got, vec![30, 31, 70]);
}

#[test]
fn offline_queue_drops_oldest() {
    let mut rig = Rig::new(short_scenario(60, &[(20, 2), (40, 1), (50, 1)]));
    rig.edge.max_pending = 2;
    rig.edge.rule_streak = 10;
    let mut agent = rig.agent();
    agent.link_mut().disconnect();
    for (w, s) in rig.cfg.generate().iter().enumerate() {
        agent.process_window(w as u64, s).unwrap();
    }
    assert_eq!(agent.stats().events_dropped, 2);
    agent.link_mut().reconnect();
    agent.flush_pending();
    let got: Vec<u64> = rig.cloud.events().iter().map(|e| e.event.window_index).collect();
    assert_eq!(got, vec![40, 50]);
}

fn snapshot_from(points: Vec<Vec<f64>>, version: u64, k: usize) -> ModelSnapshot {
    let params = LofParams { k, ..LofParams::default() };
    let scores = LofScorer::new(&points, params).unwrap().score_members();
    let threshold = calibrate_threshold(&scores, 0.99, 1.2).unwrap();
    ModelSnapshot::new(version, params, ReferenceSet::from_points(points, 512).unwrap(), threshold, None).unwrap()
}

#[test]
fn update_versions() {
    let rig = Rig::new(short_scenario(20, &[]));
    let fx = FeatureExtractor::new(rig.cfg.feature_config()).unwrap();
    let points: Vec<Vec<f64>> = rig
        .cfg
        .commissioning_windows(80)
        .iter()
        .map(|w| fx.extract(w).unwrap().to_vec())
        .collect();
    let mut agent = rig.agent();
    assert_eq!(agent.model_version(), 1);

    let v4 = snapshot_from(points.clone(), 4, 5).to_update();
    assert!(agent.apply_model_update(&v4).accepted);
    assert_eq!(agent.model_version(), 4);
    let stale = snapshot_from(points.clone(), 3, 5).to_update();
    let d = agent.apply_model_update(&stale);
    assert!(!d.accepted);
    assert_eq!(d.active_version, 4);
    assert!(!agent.apply_model_update(&v4).accepted);

    let mut bad_dim = snapshot_from(points.clone(), 9, 5).to_update();
    for p in &mut bad_dim.reference_points {
        p.pop();
    }
    assert!(!agent.apply_model_update(&bad_dim).accepted);
    let mut tiny = snapshot_from(points, 9, 5).to_update();
    tiny.reference_points.truncate(5);
    assert!(!agent.apply_model_update(&tiny).accepted);
    assert_eq!(agent.model_version(), 4);

    // the accepted model was persisted and survives a restart
    drop(agent);
    let agent = rig.agent();
    assert_eq!(agent.model_version(), 4);
    assert!(fs::read_dir(&rig.edge.model_dir).unwrap().count() >= 1);
}

#[test]
fn pushed_update_is_acked_and_used() {
    // the window-10 event registers the edge so the push is delivered live
    let rig = Rig::new(short_scenario(60, &[(10, 1), (40, 1)]));
    let fx = FeatureExtractor::new(rig.cfg.feature_config()).unwrap();
    let points: Vec<Vec<f64>> = rig
        .cfg
        .commissioning_windows(80)
        .iter()
        .map(|w| fx.extract(w).unwrap().to_vec())
        .collect();
    let mut agent = rig.agent();
    let windows = rig.cfg.generate();
    for (w, s) in windows.iter().enumerate().take(20) {
        agent.process_window(w as u64, s).unwrap();
    }
    let sent = rig.cloud.push_snapshot(EDGE_ID, snapshot_from(points, 2, 5)).unwrap();
    assert!(matches!(sent, DistributionStatus::Sent { version: 2, .. }));
    for (w, s) in windows.iter().enumerate().skip(20) {
        agent.process_window(w as u64, s).unwrap();
    }
    assert_eq!(rig.cloud.distribution_status(EDGE_ID), Some(DistributionStatus::Accepted { version: 2 }));
    let versions: Vec<(u64, u64)> = rig
        .cloud
        .events()
        .iter()
        .map(|e| (e.event.window_index, e.event.model_version))
        .collect();
    assert_eq!(versions, vec![(10, 1), (40, 2)]);
    assert!(agent.link_mut().poll_update().is_none());
}

#[test]
fn update_from_recent_data_lowers_borderline_scores() {
    let cfg = lambdapm_core::sim::ScenarioConfig::drift();
    let fx = FeatureExtractor::new(cfg.feature_config()).unwrap();
    let feats = |ws: Vec<Vec<f64>>| -> Vec<Vec<f64>> { ws.iter().map(|w| fx.extract(w).unwrap().to_vec()).collect() };
    let old = snapshot_from(feats(cfg.commissioning_windows(200)), 1, 5);
    let recent: Vec<Vec<f64>> = feats((1000..1200).map(|w| cfg.window(w)).collect());
    let new = snapshot_from(recent, 2, 5);
    let replay = feats(cfg.held_out_normal(100));
    let mean = |m: &ModelSnapshot| replay.iter().map(|f| m.score(f).unwrap()).sum::<f64>() / replay.len() as f64;
    assert!(mean(&new) < mean(&old), "{} vs {}", mean(&new), mean(&old));
}

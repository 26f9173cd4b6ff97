use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::info;

use super::metrics::{compute_metrics, FalsePositiveCheck, Metrics};
use super::scenario::ScenarioConfig;
use super::SimError;
use crate::cloud::server::TcpServer;
use crate::cloud::{inproc::InProcLink, CloudConfig, CloudService, DistributionStatus, MaintenanceOrder, RetrainParams};
use crate::edge::{CloudLink, EdgeAgent, EdgeConfig, TcpLink, WindowOutcome, WireStats};
use crate::features::FeatureExtractor;
use crate::lof::{calibrate_threshold, LofParams, LofScorer, ModelSnapshot, ReferenceSet};
use crate::Clock;

pub const EDGE_ID: &str = "edge-1";
pub const EQUIPMENT_ID: &str = "fan-1";
const CLOCK_BASE_MS: u64 = 1_700_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Inproc,
    Tcp,
}

impl std::str::FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(Topology::Inproc),
            "tcp" => Ok(Topology::Tcp),
            other => Err(format!("unknown topology `{other}` (expected inproc or tcp)")),
        }
    }
}

/// Logical time: each window advances the clock by its duration, so runs
/// are reproducible.
#[derive(Clone)]
pub struct LogicalClock {
    now: Arc<AtomicU64>,
}

impl LogicalClock {
    pub fn new(start_ms: u64) -> Self {
        LogicalClock {
            now: Arc::new(AtomicU64::new(start_ms)),
        }
    }

    pub fn set(&self, ms: u64) {
        self.now.store(ms, Ordering::SeqCst);
    }

    pub fn clock(&self) -> Clock {
        let now = self.now.clone();
        Arc::new(move || now.load(Ordering::SeqCst))
    }
}

/// Everything a finished scenario leaves behind for inspection.
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub metrics: Metrics,
    pub labels: Vec<bool>,
    pub outcomes: Vec<WindowOutcome>,
    pub wire: WireStats,
    pub cloud: Arc<CloudService>,
    pub orders: Vec<MaintenanceOrder>,
    pub distribution: Option<DistributionStatus>,
    pub false_positive_check: Option<FalsePositiveCheck>,
    pub work_dir: PathBuf,
}

/// Builds the version-1 model an edge starts with: `warm_start_windows`
/// commissioning windows as reference, threshold calibrated on their member
/// LOF scores.
pub fn warm_start_model(cfg: &ScenarioConfig) -> Result<ModelSnapshot, SimError> {
    let fx = FeatureExtractor::new(cfg.feature_config())?;
    let points: Vec<Vec<f64>> = cfg
        .commissioning_windows(cfg.warm_start_windows)
        .iter()
        .map(|w| fx.extract(w).map(|f| f.to_vec()))
        .collect::<Result<_, _>>()?;
    let params = LofParams {
        k: cfg.k,
        ..LofParams::default()
    };
    let scores = LofScorer::new(&points, params)?.score_members();
    let threshold = calibrate_threshold(&scores, cfg.warm_threshold_quantile, cfg.warm_threshold_factor)?;
    let reference = ReferenceSet::from_points(points, cfg.capacity)?;
    Ok(ModelSnapshot::new(1, params, reference, threshold, None)?)
}

/// Edge settings matching a scenario, with state under `dir/edge`.
pub fn edge_config(cfg: &ScenarioConfig, dir: &Path, initial_model: PathBuf, cloud_addr: String) -> EdgeConfig {
    EdgeConfig {
        edge_id: EDGE_ID.into(),
        equipment_id: EQUIPMENT_ID.into(),
        cloud_addr,
        features: cfg.feature_config(),
        k: cfg.k,
        capacity: cfg.capacity,
        initial_model: Some(initial_model),
        model_dir: dir.join("edge").join("models"),
        spool_dir: dir.join("edge").join("spool"),
        ..EdgeConfig::default()
    }
}

/// Cloud settings matching a scenario, with its store at `dir/cloud`.
pub fn cloud_config(cfg: &ScenarioConfig, dir: &Path) -> Result<CloudConfig, SimError> {
    Ok(CloudConfig {
        store_dir: dir.join("cloud"),
        catalog: Some(cfg.build_catalog()?),
        retrain: RetrainParams {
            k: cfg.k,
            capacity: cfg.capacity,
            ..RetrainParams::default()
        },
        retrain_seed: cfg.seed,
        ..CloudConfig::default()
    })
}

fn count_false_positives(model: &ModelSnapshot, windows: &[Vec<f64>], fx: &FeatureExtractor) -> Result<u64, SimError> {
    let mut n = 0;
    for w in windows {
        if model.score_window(&fx.extract(w)?.to_vec())?.is_anomaly {
            n += 1;
        }
    }
    Ok(n)
}

/// Runs a scenario end to end in `work_dir` (which should be empty).
pub fn run_scenario(cfg: &ScenarioConfig, topology: Topology, work_dir: &Path) -> Result<ScenarioRun, SimError> {
    cfg.validate()?;
    std::fs::create_dir_all(work_dir)?;
    let windows = cfg.generate();
    let labels = cfg.labels();

    let warm = warm_start_model(cfg)?;
    let initial = warm.save(&work_dir.join("warm-start"))?;
    info!(scenario = %cfg.name, threshold = warm.threshold, "warm-start model built");

    let clock = LogicalClock::new(CLOCK_BASE_MS);
    let window_ms = (cfg.window_size as u64 * 1000) / cfg.sample_rate.max(1) as u64;
    let cloud = Arc::new(CloudService::open_with_clock(cloud_config(cfg, work_dir)?, clock.clock())?);
    cloud.note_edge_model(EDGE_ID, warm.version);

    let (run, server) = match topology {
        Topology::Inproc => {
            let link = InProcLink::new(cloud.clone());
            let ecfg = edge_config(cfg, work_dir, initial, "inproc".into());
            (drive(cfg, &windows, ecfg, link, &cloud, &clock, window_ms)?, None)
        }
        Topology::Tcp => {
            let server = TcpServer::start(cloud.clone(), "127.0.0.1:0")?;
            let addr = server.local_addr().to_string();
            let link = TcpLink::new(addr.clone(), Duration::from_secs(5));
            let ecfg = edge_config(cfg, work_dir, initial, addr);
            (drive(cfg, &windows, ecfg, link, &cloud, &clock, window_ms)?, Some(server))
        }
    };
    drop(server);
    let (outcomes, wire, bytes_raw, distribution, fp_check, retrain_cycles) = run;

    // the harness plays operator: one order per predicted equipment, approved
    let mut orders = Vec::new();
    if let Some(p) = cloud.latest_prediction(EQUIPMENT_ID) {
        let o = cloud.create_order(&p.prediction_id)?;
        orders.push(cloud.approve_order(&o.order_id)?);
    }

    let metrics = compute_metrics(
        cfg,
        &labels,
        &outcomes,
        bytes_raw,
        wire.speed_bytes(),
        orders.len() as u64,
        retrain_cycles,
    );
    info!(?metrics, "scenario complete");
    Ok(ScenarioRun {
        config: cfg.clone(),
        topology,
        metrics,
        labels,
        outcomes,
        wire,
        cloud,
        orders,
        distribution,
        false_positive_check: fp_check,
        work_dir: work_dir.to_path_buf(),
    })
}

type DriveResult = (
    Vec<WindowOutcome>,
    WireStats,
    u64,
    Option<DistributionStatus>,
    Option<FalsePositiveCheck>,
    u64,
);

#[allow(clippy::too_many_arguments)]
fn drive<L: CloudLink>(
    cfg: &ScenarioConfig,
    windows: &[Vec<f64>],
    ecfg: EdgeConfig,
    link: L,
    cloud: &Arc<CloudService>,
    clock: &LogicalClock,
    window_ms: u64,
) -> Result<DriveResult, SimError> {
    let mut agent = EdgeAgent::new(ecfg, link, clock.clock())?;
    let fx = FeatureExtractor::new(cfg.feature_config())?;
    let mut outcomes = Vec::with_capacity(windows.len());
    let mut distribution = None;
    let mut fp_check = None;
    let mut retrain_cycles = 0;
    for (w, samples) in windows.iter().enumerate() {
        let w = w as u64;
        clock.set(CLOCK_BASE_MS + w * window_ms);
        if let Some(o) = agent.process_window(w, samples)? {
            outcomes.push(o);
        }
        if cfg.midpoint == Some(w) {
            agent.flush_pending();
            let report = agent.upload_batch()?;
            if let Some(e) = report.error {
                return Err(SimError::Run(format!("midpoint upload failed: {e}")));
            }
            cloud.retrain_edge(EDGE_ID)?;
            let before = agent.model().clone();
            cloud.distribute_model(EDGE_ID)?;
            let status = await_distribution(&mut agent, cloud, Duration::from_secs(10))?;
            retrain_cycles += 1;
            let held_out = cfg.held_out_normal(cfg.held_out_windows);
            fp_check = Some(FalsePositiveCheck {
                held_out_windows: cfg.held_out_windows,
                before_version: before.version,
                after_version: agent.model_version(),
                before: count_false_positives(&before, &held_out, &fx)?,
                after: count_false_positives(agent.model(), &held_out, &fx)?,
            });
            distribution = Some(status);
        }
    }
    agent.flush_pending();
    if agent.pending_events() > 0 {
        return Err(SimError::Run(format!(
            "{} events still undelivered at end of run",
            agent.pending_events()
        )));
    }
    let bytes_raw = agent.spool().bytes_written();
    let (_, link) = agent.shutdown()?;
    Ok((outcomes, link.stats().clone(), bytes_raw, distribution, fp_check, retrain_cycles))
}

/// Lets the agent pick up and ACK the pushed model, then waits for the
/// cloud to record the ACK.
fn await_distribution<L: CloudLink>(
    agent: &mut EdgeAgent<L>,
    cloud: &CloudService,
    timeout: Duration,
) -> Result<DistributionStatus, SimError> {
    let deadline = Instant::now() + timeout;
    loop {
        agent.poll_updates();
        match cloud.distribution_status(EDGE_ID) {
            Some(s @ (DistributionStatus::Accepted { .. } | DistributionStatus::Rejected { .. })) => return Ok(s),
            other if Instant::now() >= deadline => {
                return Err(SimError::Run(format!("model distribution stuck at {other:?}")));
            }
            _ => thread::sleep(Duration::from_millis(2)),
        }
    }
}

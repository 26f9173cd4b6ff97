use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::SimError;
use crate::cloud::{CatalogEntry, OrderAction};
use crate::features::{FeatureConfig, FeatureExtractor};

/// Replay windows drawn from this stream offset never coincide with the
/// scenario's own windows.
pub const HELD_OUT_STREAM: u64 = 1 << 40;
pub const COMMISSIONING_STREAM: u64 = 1 << 41;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub start_window: u64,
    /// Inclusive.
    pub end_window: u64,
    pub extra_bin: usize,
    pub extra_amp: f64,
    pub noise_boost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
}

impl Fault {
    pub fn contains(&self, w: u64) -> bool {
        (self.start_window..=self.end_window).contains(&w)
    }
}

/// A fault type known to the cloud's catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultProfile {
    pub cause: String,
    pub part: String,
    pub action: OrderAction,
    pub extra_bin: usize,
    pub extra_amp: f64,
}

/// Harmonic amplitudes scale by `1 + gain * clamp((w - start) / ramp, 0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub start_window: u64,
    pub ramp_windows: u64,
    pub gain: f64,
}

impl Drift {
    pub fn factor(&self, w: u64) -> f64 {
        if w < self.start_window {
            return 1.0;
        }
        let t = if self.ramp_windows == 0 {
            1.0
        } else {
            ((w - self.start_window) as f64 / self.ramp_windows as f64).min(1.0)
        };
        1.0 + self.gain * t
    }

    pub fn final_factor(&self) -> f64 {
        1.0 + self.gain
    }
}

/// Bounds checked after a run; `sim` exits non-zero if any fails.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Assertions {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_latency_windows: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_bytes_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_orders: Option<u64>,
    /// Held-out false positives must strictly drop across the retrain.
    pub retrain_reduces_false_positives: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_windows: u64,
    pub window_size: usize,
    pub sample_rate: u32,
    pub base_freq_bin: usize,
    pub harmonic_amps: Vec<f64>,
    pub noise_sigma: f64,
    /// Number of log-spaced feature bands.
    pub bands: usize,
    pub faults: Vec<Fault>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<Drift>,
    pub catalog: Vec<FaultProfile>,
    pub warm_start_windows: u64,
    pub warm_threshold_quantile: f64,
    pub warm_threshold_factor: f64,
    /// Window after which the one upload + retrain + distribute cycle runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub midpoint: Option<u64>,
    pub k: usize,
    pub capacity: usize,
    pub held_out_windows: u64,
    pub assertions: Assertions,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            seed: 1,
            duration_windows: 1000,
            window_size: 256,
            sample_rate: 16_000,
            base_freq_bin: 2,
            harmonic_amps: pink_harmonics(63),
            noise_sigma: 0.02,
            bands: 24,
            faults: Vec::new(),
            drift: None,
            catalog: default_catalog(),
            warm_start_windows: 50,
            warm_threshold_quantile: 0.99,
            warm_threshold_factor: 1.5,
            midpoint: None,
            k: 5,
            capacity: 512,
            held_out_windows: 200,
            assertions: Assertions::default(),
        }
    }
}

/// Amplitudes falling as 1/sqrt(h), so every octave carries similar power.
pub fn pink_harmonics(count: usize) -> Vec<f64> {
    (1..=count).map(|h| 1.0 / (h as f64).sqrt()).collect()
}

pub fn default_catalog() -> Vec<FaultProfile> {
    vec![
        FaultProfile {
            cause: "foreign-object".into(),
            part: "fan-unit-A".into(),
            action: OrderAction::Replace,
            extra_bin: 45,
            extra_amp: 1.0,
        },
        FaultProfile {
            cause: "bearing-wear".into(),
            part: "bearing-6203".into(),
            action: OrderAction::Replace,
            extra_bin: 91,
            extra_amp: 1.0,
        },
        FaultProfile {
            cause: "loose-mount".into(),
            part: "mount-bracket".into(),
            action: OrderAction::Inspect,
            extra_bin: 13,
            extra_amp: 1.0,
        },
    ]
}

fn fault_from(profile: &FaultProfile, start: u64, len: u64, noise_boost: f64) -> Fault {
    Fault {
        start_window: start,
        end_window: start + len - 1,
        extra_bin: profile.extra_bin,
        extra_amp: profile.extra_amp,
        noise_boost,
        cause: Some(profile.cause.clone()),
    }
}

impl ScenarioConfig {
    /// The fan demo: 2,000 windows, four 5-window faults (1% duty), one
    /// retrain cycle at the midpoint.
    pub fn demo() -> Self {
        let catalog = default_catalog();
        let faults = vec![
            fault_from(&catalog[0], 300, 5, 0.1),
            fault_from(&catalog[1], 750, 5, 0.1),
            fault_from(&catalog[0], 1300, 5, 0.1),
            fault_from(&catalog[2], 1700, 5, 0.1),
        ];
        ScenarioConfig {
            name: "demo".into(),
            seed: 2024,
            duration_windows: 2000,
            faults,
            catalog,
            midpoint: Some(1000),
            assertions: Assertions {
                min_recall: Some(0.9),
                min_precision: Some(0.8),
                max_latency_windows: Some(3),
                max_bytes_ratio: Some(0.05),
                ..Assertions::default()
            },
            ..ScenarioConfig::default()
        }
    }

    /// The demo stream without faults.
    pub fn zero_fault() -> Self {
        ScenarioConfig {
            name: "zero-fault".into(),
            faults: Vec::new(),
            assertions: Assertions {
                max_bytes_ratio: Some(0.01),
                max_orders: Some(0),
                ..Assertions::default()
            },
            ..ScenarioConfig::demo()
        }
    }

    /// Normal operation that drifts to a louder regime; the midpoint
    /// retrain must absorb it.
    pub fn drift() -> Self {
        ScenarioConfig {
            name: "drift".into(),
            seed: 77,
            duration_windows: 1600,
            faults: Vec::new(),
            drift: Some(Drift {
                start_window: 100,
                ramp_windows: 300,
                gain: 0.5,
            }),
            midpoint: Some(800),
            assertions: Assertions {
                retrain_reduces_false_positives: true,
                ..Assertions::default()
            },
            ..ScenarioConfig::demo()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "demo" => Some(Self::demo()),
            "zero-fault" => Some(Self::zero_fault()),
            "drift" => Some(Self::drift()),
            _ => None,
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            window_size: self.window_size,
            hop: self.window_size,
            band_edges: crate::features::log_band_edges(self.window_size, self.bands),
        }
    }

    fn harmonic_bins(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.harmonic_amps.len()).map(|h| self.base_freq_bin * (h + 1))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.duration_windows == 0 {
            return bad("duration_windows must be >= 1".into());
        }
        if self.window_size < 2 || !self.window_size.is_multiple_of(2) {
            return bad("window_size must be even".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0".into());
        }
        let nyquist = self.window_size / 2;
        if self.harmonic_bins().any(|b| b == 0 || b >= nyquist) {
            return bad("harmonics must lie strictly between DC and Nyquist".into());
        }
        if self.warm_start_windows < self.k as u64 + 1 {
            return bad(format!("warm_start_windows must be >= k+1 = {}", self.k + 1));
        }
        for f in &self.faults {
            if f.start_window > f.end_window || f.end_window >= self.duration_windows {
                return bad(format!(
                    "fault [{}, {}] outside duration {}",
                    f.start_window, f.end_window, self.duration_windows
                ));
            }
            if f.start_window < self.warm_start_windows {
                return bad("faults must start after the warm-start windows".into());
            }
            if f.extra_bin == 0 || f.extra_bin >= nyquist {
                return bad(format!("extra_bin {} out of range", f.extra_bin));
            }
            if self.harmonic_bins().any(|b| b == f.extra_bin) {
                warn!(bin = f.extra_bin, "fault tone coincides with a harmonic; fault may be indistinguishable");
            }
            if let Some(c) = &f.cause {
                if !self.catalog.iter().any(|p| &p.cause == c) {
                    return bad(format!("fault cause `{c}` missing from catalog"));
                }
            }
        }
        if let Some(m) = self.midpoint {
            if m >= self.duration_windows {
                return bad("midpoint must fall inside the run".into());
            }
        }
        if self.catalog.is_empty() {
            return bad("catalog must not be empty".into());
        }
        Ok(())
    }

    /// Window-level fault labels.
    pub fn labels(&self) -> Vec<bool> {
        (0..self.duration_windows)
            .map(|w| self.faults.iter().any(|f| f.contains(w)))
            .collect()
    }

    fn tone(&self, bin: usize, amp: f64, phase: f64, out: &mut [f64]) {
        let n = self.window_size as f64;
        for (i, x) in out.iter_mut().enumerate() {
            *x += amp * (2.0 * PI * bin as f64 * i as f64 / n + phase).sin();
        }
    }

    fn synth(&self, w: u64, stream: u64, amp_factor: f64, faults: &[&Fault]) -> Vec<f64> {
        let mut x = vec![0.0; self.window_size];
        for (h, a) in self.harmonic_amps.iter().enumerate() {
            self.tone(self.base_freq_bin * (h + 1), a * amp_factor, 0.0, &mut x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream + w);
        if self.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
            for v in x.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        for f in faults {
            self.tone(f.extra_bin, f.extra_amp, 0.5, &mut x);
            if f.noise_boost > 0.0 {
                let boost = Normal::new(0.0, f.noise_boost).expect("finite boost");
                for v in x.iter_mut() {
                    *v += boost.sample(&mut rng);
                }
            }
        }
        x
    }

    fn drift_factor(&self, w: u64) -> f64 {
        self.drift.as_ref().map_or(1.0, |d| d.factor(w))
    }

    /// Samples of window `w`.
    pub fn window(&self, w: u64) -> Vec<f64> {
        let active: Vec<&Fault> = self.faults.iter().filter(|f| f.contains(w)).collect();
        self.synth(w, 0, self.drift_factor(w), &active)
    }

    /// Every window of the scenario, in order.
    pub fn generate(&self) -> Vec<Vec<f64>> {
        (0..self.duration_windows).map(|w| self.window(w)).collect()
    }

    /// Flattened sample stream, `t` counting samples from 0.
    pub fn generate_stream(&self) -> impl Iterator<Item = crate::features::SensorSample> + '_ {
        let n = self.window_size as u64;
        (0..self.duration_windows).flat_map(move |w| {
            self.window(w)
                .into_iter()
                .enumerate()
                .map(move |(i, value)| crate::features::SensorSample { t: w * n + i as u64, value })
        })
    }

    /// Fault-free windows at the final drift level, from a noise stream the
    /// scenario itself never uses.
    pub fn held_out_normal(&self, count: u64) -> Vec<Vec<f64>> {
        let factor = self.drift.as_ref().map_or(1.0, Drift::final_factor);
        (0..count).map(|w| self.synth(w, HELD_OUT_STREAM, factor, &[])).collect()
    }

    /// Fault-free windows at the starting drift level, standing in for the
    /// data an edge is commissioned with before the scenario starts.
    pub fn commissioning_windows(&self, count: u64) -> Vec<Vec<f64>> {
        let factor = self.drift_factor(0);
        (0..count).map(|w| self.synth(w, COMMISSIONING_STREAM, factor, &[])).collect()
    }

    /// Catalog signatures: features of noise-free windows carrying each
    /// fault tone on top of the nominal harmonics.
    pub fn build_catalog(&self) -> Result<Vec<CatalogEntry>, SimError> {
        let fx = FeatureExtractor::new(self.feature_config())?;
        let clean = ScenarioConfig {
            noise_sigma: 0.0,
            ..self.clone()
        };
        self.catalog
            .iter()
            .map(|p| {
                let f = Fault {
                    start_window: 0,
                    end_window: 0,
                    extra_bin: p.extra_bin,
                    extra_amp: p.extra_amp,
                    noise_boost: 0.0,
                    cause: None,
                };
                let x = clean.synth(0, 0, 1.0, &[&f]);
                Ok(CatalogEntry {
                    cause: p.cause.clone(),
                    part: p.part.clone(),
                    action: p.action,
                    signature: fx.extract(&x)?.to_vec(),
                })
            })
            .collect()
    }
}

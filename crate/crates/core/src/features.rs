//! Windowing and spectral band-energy features.
//!
//! A window of `N` samples is mean-removed, transformed with a rectangular
//! (untapered) DFT, and reduced to `B` band energies (sums of squared
//! magnitudes over contiguous bin ranges) plus the time-domain RMS. The
//! resulting `B + 1` reals are what the LOF model scores.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("feature config: {0}")]
    Config(String),
    #[error("sample stream: t={got} does not follow t={prev}")]
    NonMonotone { prev: u64, got: u64 },
    #[error("window has {got} samples, expected {expected}")]
    WindowLength { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorSample {
    pub t: u64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start_index: u64,
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub band_energies: Vec<f64>,
    pub rms: f64,
}

impl FeatureVector {
    /// Flattened layout used everywhere downstream: bands first, RMS last.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.band_energies.len() + 1);
        v.extend_from_slice(&self.band_energies);
        v.push(self.rms);
        v
    }

    pub fn from_slice(v: &[f64]) -> Option<FeatureVector> {
        let (rms, bands) = v.split_last()?;
        Some(FeatureVector {
            band_energies: bands.to_vec(),
            rms: *rms,
        })
    }

    pub fn dim(&self) -> usize {
        self.band_energies.len() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window_size: usize,
    pub hop: usize,
    pub band_edges: Vec<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_size: 256,
            hop: 256,
            band_edges: log_band_edges(256, 8),
        }
    }
}

impl FeatureConfig {
    pub fn bands(&self) -> usize {
        self.band_edges.len().saturating_sub(1)
    }

    pub fn feature_dim(&self) -> usize {
        self.bands() + 1
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let n = self.window_size;
        if n < 2 || !n.is_multiple_of(2) {
            return Err(FeatureError::Config(format!(
                "window_size must be even and >= 2, got {n}"
            )));
        }
        if self.hop < 1 || self.hop > n {
            return Err(FeatureError::Config(format!(
                "hop must be in [1, {n}], got {}",
                self.hop
            )));
        }
        check_band_edges(&self.band_edges, n / 2 + 1)
    }
}

/// `B + 1` roughly logarithmically spaced bin edges over the one-sided
/// spectrum of an `n`-sample window: `0, ≈bins^(1/B), ≈bins^(2/B), …, bins`.
pub fn log_band_edges(n: usize, bands: usize) -> Vec<usize> {
    let bins = n / 2 + 1;
    let mut edges = vec![0usize];
    for b in 1..=bands {
        let target = if b == bands {
            bins
        } else {
            (bins as f64).powf(b as f64 / bands as f64).round() as usize
        };
        let prev = *edges.last().unwrap();
        edges.push(target.max(prev + 1).min(bins));
    }
    edges
}

fn check_band_edges(edges: &[usize], bins: usize) -> Result<(), FeatureError> {
    if edges.len() < 2 {
        return Err(FeatureError::Config("need at least two band edges".into()));
    }
    if edges[0] != 0 {
        return Err(FeatureError::Config("band_edges must start at 0".into()));
    }
    if *edges.last().unwrap() != bins {
        return Err(FeatureError::Config(format!(
            "band_edges must end at {bins} (N/2+1), got {}",
            edges.last().unwrap()
        )));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FeatureError::Config("band_edges must be strictly increasing".into()));
    }
    Ok(())
}

/// Iterator adapter producing windows `[j·H, j·H+N)` (stream positions) from
/// a sample source. A trailing partial window is never emitted.
pub struct Windower<I> {
    samples: I,
    size: usize,
    hop: usize,
    buf: Vec<f64>,
    buf_start: u64,
    last_t: Option<u64>,
    failed: bool,
}

pub fn window_stream<I>(samples: I, size: usize, hop: usize) -> Result<Windower<I::IntoIter>, FeatureError>
where
    I: IntoIterator<Item = SensorSample>,
{
    if size < 2 {
        return Err(FeatureError::Config(format!("window size must be >= 2, got {size}")));
    }
    if hop < 1 || hop > size {
        return Err(FeatureError::Config(format!("hop must be in [1, {size}], got {hop}")));
    }
    Ok(Windower {
        samples: samples.into_iter(),
        size,
        hop,
        buf: Vec::with_capacity(size),
        buf_start: 0,
        last_t: None,
        failed: false,
    })
}

impl<I: Iterator<Item = SensorSample>> Iterator for Windower<I> {
    type Item = Result<Window, FeatureError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        while self.buf.len() < self.size {
            let s = self.samples.next()?;
            if let Some(prev) = self.last_t {
                if s.t <= prev {
                    self.failed = true;
                    return Some(Err(FeatureError::NonMonotone { prev, got: s.t }));
                }
            }
            self.last_t = Some(s.t);
            self.buf.push(s.value);
        }
        let window = Window {
            start_index: self.buf_start,
            samples: self.buf.clone(),
        };
        self.buf.drain(..self.hop);
        self.buf_start += self.hop as u64;
        Some(Ok(window))
    }
}

/// Mean-removed copy of the window.
fn centered(samples: &[f64]) -> Vec<f64> {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.iter().map(|x| x - mean).collect()
}

/// RMS of the mean-removed signal.
pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let c = centered(samples);
    (c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64).sqrt()
}

/// One-sided magnitude spectrum `|X[m]|`, `m = 0..=N/2`, of a mean-removed
/// window. Planned once per window size and reusable across threads.
#[derive(Clone)]
pub struct SpectralAnalyzer {
    size: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralAnalyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralAnalyzer").field("size", &self.size).finish()
    }
}

impl SpectralAnalyzer {
    pub fn new(size: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(size);
        SpectralAnalyzer { size, fft }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn magnitude(&self, samples: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if samples.len() != self.size {
            return Err(FeatureError::WindowLength {
                expected: self.size,
                got: samples.len(),
            });
        }
        let mut buf: Vec<Complex<f64>> = centered(samples)
            .into_iter()
            .map(|x| Complex::new(x, 0.0))
            .collect();
        self.fft.process(&mut buf);
        Ok(buf[..=self.size / 2].iter().map(|c| c.norm()).collect())
    }
}

/// Convenience one-shot form of [`SpectralAnalyzer::magnitude`].
pub fn dft_magnitude(window: &Window) -> Result<Vec<f64>, FeatureError> {
    let n = window.samples.len();
    if n < 2 || !n.is_multiple_of(2) {
        return Err(FeatureError::Config(format!("window length must be even, got {n}")));
    }
    SpectralAnalyzer::new(n).magnitude(&window.samples)
}

/// Band `b` is the sum of squared magnitudes over bins `[edges[b], edges[b+1])`.
pub fn band_energies(spectrum: &[f64], edges: &[usize]) -> Result<Vec<f64>, FeatureError> {
    check_band_edges(edges, spectrum.len())?;
    Ok(edges
        .windows(2)
        .map(|w| spectrum[w[0]..w[1]].iter().map(|m| m * m).sum())
        .collect())
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    analyzer: SpectralAnalyzer,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self, FeatureError> {
        config.validate()?;
        let analyzer = SpectralAnalyzer::new(config.window_size);
        Ok(FeatureExtractor { config, analyzer })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn extract(&self, samples: &[f64]) -> Result<FeatureVector, FeatureError> {
        let spectrum = self.analyzer.magnitude(samples)?;
        Ok(FeatureVector {
            band_energies: band_energies(&spectrum, &self.config.band_edges)?,
            rms: rms(samples),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn samples(values: impl IntoIterator<Item = f64>) -> Vec<SensorSample> {
        values
            .into_iter()
            .enumerate()
            .map(|(t, value)| SensorSample { t: t as u64, value })
            .collect()
    }

    fn starts(n_samples: usize, size: usize, hop: usize) -> Vec<u64> {
        window_stream(samples((0..n_samples).map(|i| i as f64)), size, hop)
            .unwrap()
            .map(|w| w.unwrap().start_index)
            .collect()
    }

    #[test]
    fn windowing_counts() {
        assert_eq!(starts(10, 4, 4), vec![0, 4]);
        assert_eq!(starts(10, 4, 2), vec![0, 2, 4, 6]);
        assert!(starts(3, 4, 4).is_empty());
    }

    #[test]
    fn window_contents_follow_hop() {
        let ws: Vec<Window> = window_stream(samples((0..10).map(|i| i as f64)), 4, 2)
            .unwrap()
            .map(Result::unwrap)
            .collect();
        assert_eq!(ws[1].samples, vec![2.0, 3.0, 4.0, 5.0]);
        assert_eq!(ws[3].samples, vec![6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn non_monotone_stream_errors() {
        let mut s = samples((0..8).map(|i| i as f64));
        s[5].t = 3;
        let out: Vec<_> = window_stream(s, 4, 4).unwrap().collect();
        assert!(out[0].is_ok());
        assert_eq!(out[1], Err(FeatureError::NonMonotone { prev: 4, got: 3 }));
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn bad_window_params() {
        assert!(window_stream(samples([]), 1, 1).is_err());
        assert!(window_stream(samples([]), 4, 0).is_err());
        assert!(window_stream(samples([]), 4, 5).is_err());
    }

    #[test]
    fn constant_window_has_zero_spectrum() {
        let w = Window { start_index: 0, samples: vec![3.7; 8] };
        assert!(dft_magnitude(&w).unwrap().iter().all(|&m| m.abs() < 1e-12));
    }

    #[test]
    fn bin_aligned_sine() {
        let w = Window {
            start_index: 0,
            samples: (0..8).map(|n| (2.0 * PI * 2.0 * n as f64 / 8.0).sin()).collect(),
        };
        let mag = dft_magnitude(&w).unwrap();
        assert_eq!(mag.len(), 5);
        for (m, v) in mag.iter().enumerate() {
            let want = if m == 2 { 4.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-9, "bin {m}: {v}");
        }
    }

    #[test]
    fn band_sums() {
        assert_eq!(
            band_energies(&[0.0, 4.0, 0.0, 0.0, 0.0], &[0, 2, 5]).unwrap(),
            vec![16.0, 0.0]
        );
        assert_eq!(band_energies(&[0.0; 5], &[0, 2, 5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn malformed_edges() {
        let s = [0.0; 5];
        assert!(band_energies(&s, &[1, 2, 5]).is_err());
        assert!(band_energies(&s, &[0, 2, 4]).is_err());
        assert!(band_energies(&s, &[0, 3, 3, 5]).is_err());
        assert!(band_energies(&s, &[0]).is_err());
    }

    #[test]
    fn default_edges_are_valid() {
        let cfg = FeatureConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.band_edges, vec![0, 2, 3, 6, 11, 21, 38, 70, 129]);
        assert_eq!(cfg.feature_dim(), 9);
    }

    #[test]
    fn log_edges_stay_strict_for_many_bands() {
        for n in [8, 16, 64, 256] {
            for b in 1..=(n / 2) {
                check_band_edges(&log_band_edges(n, b), n / 2 + 1).unwrap();
            }
        }
    }

    #[test]
    fn rms_ignores_offset() {
        let x: Vec<f64> = (0..16).map(|n| (n as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
        assert!((rms(&x) - rms(&y)).abs() < 1e-9);
    }

    #[test]
    fn extractor_rejects_wrong_length() {
        let fx = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        assert_eq!(
            fx.extract(&[0.0; 10]),
            Err(FeatureError::WindowLength { expected: 256, got: 10 })
        );
    }
}

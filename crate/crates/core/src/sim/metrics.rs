use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::scenario::ScenarioConfig;
use crate::edge::WindowOutcome;

/// Window-level detection grace after a fault ends.
pub const GRACE_WINDOWS: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub bytes_raw: u64,
    pub bytes_speed: u64,
    /// Per injected fault; `None` when the fault went undetected.
    pub detection_latency_windows: Vec<Option<u64>>,
    pub precision: f64,
    pub recall: f64,
    pub orders_created: u64,
    pub retrain_cycles: u64,
    pub flagged_windows: u64,
    pub false_positive_windows: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FalsePositiveCheck {
    pub held_out_windows: u64,
    pub before_version: u64,
    pub after_version: u64,
    pub before: u64,
    pub after: u64,
}

impl Metrics {
    pub fn bytes_ratio(&self) -> f64 {
        if self.bytes_raw == 0 {
            0.0
        } else {
            self.bytes_speed as f64 / self.bytes_raw as f64
        }
    }

    /// Worst latency over all faults: `Ok(None)` without faults,
    /// `Err(())` if some fault was never detected.
    pub fn max_latency(&self) -> Result<Option<u64>, ()> {
        let mut worst = None;
        for l in &self.detection_latency_windows {
            let l = l.ok_or(())?;
            worst = Some(worst.map_or(l, |w: u64| w.max(l)));
        }
        Ok(worst)
    }

    fn max_latency_cell(&self) -> String {
        match self.max_latency() {
            Ok(Some(l)) => l.to_string(),
            Ok(None) => String::new(),
            Err(()) => "undetected".into(),
        }
    }
}

/// Precision counts a flagged window as correct when it lies in a fault
/// interval or its grace tail; recall counts flagged windows inside the
/// labelled fault windows. Both are 1 when their denominator is empty.
pub fn compute_metrics(
    cfg: &ScenarioConfig,
    labels: &[bool],
    outcomes: &[WindowOutcome],
    bytes_raw: u64,
    bytes_speed: u64,
    orders_created: u64,
    retrain_cycles: u64,
) -> Metrics {
    let in_grace = |w: u64| {
        cfg.faults
            .iter()
            .any(|f| w >= f.start_window && w <= f.end_window + GRACE_WINDOWS)
    };
    let flagged: Vec<u64> = outcomes.iter().filter(|o| o.is_anomaly).map(|o| o.window_index).collect();
    let true_pos = flagged.iter().filter(|&&w| in_grace(w)).count() as u64;
    let false_pos = flagged.len() as u64 - true_pos;
    let fault_windows = labels.iter().filter(|&&l| l).count() as u64;
    let hit_windows = flagged
        .iter()
        .filter(|&&w| labels.get(w as usize).copied().unwrap_or(false))
        .count() as u64;
    let latency = cfg
        .faults
        .iter()
        .map(|f| {
            flagged
                .iter()
                .find(|&&w| w >= f.start_window && w <= f.end_window + GRACE_WINDOWS)
                .map(|&w| w - f.start_window)
        })
        .collect();
    Metrics {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        bytes_raw,
        bytes_speed,
        detection_latency_windows: latency,
        precision: if flagged.is_empty() {
            1.0
        } else {
            true_pos as f64 / flagged.len() as f64
        },
        recall: if fault_windows == 0 {
            1.0
        } else {
            hit_windows as f64 / fault_windows as f64
        },
        orders_created,
        retrain_cycles,
        flagged_windows: flagged.len() as u64,
        false_positive_windows: false_pos,
    }
}

pub const CSV_COLUMNS: [&str; 9] = [
    "scenario",
    "seed",
    "bytes_raw",
    "bytes_speed",
    "max_detection_latency_windows",
    "precision",
    "recall",
    "orders_created",
    "retrain_cycles",
];

fn row(m: &Metrics) -> [String; 9] {
    [
        m.scenario.clone(),
        m.seed.to_string(),
        m.bytes_raw.to_string(),
        m.bytes_speed.to_string(),
        m.max_latency_cell(),
        format!("{:.4}", m.precision),
        format!("{:.4}", m.recall),
        m.orders_created.to_string(),
        m.retrain_cycles.to_string(),
    ]
}

pub fn to_csv(rows: &[Metrics]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for m in rows {
        out.push_str(&row(m).join(","));
        out.push('\n');
    }
    out
}

/// Writes `metrics.csv` into `dir` and returns its path.
pub fn write_csv(dir: &Path, rows: &[Metrics]) -> io::Result<std::path::PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("metrics.csv");
    fs::write(&path, to_csv(rows))?;
    Ok(path)
}

/// Aligned plain-text table of the same columns plus the bytes ratio.
pub fn table(rows: &[Metrics]) -> String {
    let mut header: Vec<String> = CSV_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.push("speed/raw".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|m| {
            let mut r = row(m).to_vec();
            r.push(format!("{:.4}", m.bytes_ratio()));
            r
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in std::iter::once(&header).chain(body.iter()) {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(name: &str) -> Metrics {
        Metrics {
            scenario: name.into(),
            seed: 1,
            bytes_raw: 1000,
            bytes_speed: 20,
            detection_latency_windows: vec![Some(0), Some(2)],
            precision: 1.0,
            recall: 0.95,
            orders_created: 1,
            retrain_cycles: 1,
            flagged_windows: 10,
            false_positive_windows: 0,
        }
    }

    #[test]
    fn csv_shape() {
        let csv = to_csv(&[metrics("a")]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 9);
        assert_eq!(lines[1], "a,1,1000,20,2,1.0000,0.9500,1,1");
        let csv = to_csv(&[metrics("a"), metrics("b")]);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap(), lines[0]);
    }

    #[test]
    fn undetected_fault_cell() {
        let mut m = metrics("a");
        m.detection_latency_windows.push(None);
        assert_eq!(m.max_latency(), Err(()));
        assert!(to_csv(&[m]).contains(",undetected,"));
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lambdapm_core::canonical;
use lambdapm_core::sim::{check_assertions, cloud_config, edge_config, warm_start_model, run_scenario, table, write_csv, AssertionOutcome, Metrics, ScenarioConfig, Topology};

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: ScenarioConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

pub struct Report {
    pub metrics: Vec<Metrics>,
    pub assertions: Vec<(String, Vec<AssertionOutcome>)>,
    pub csv: PathBuf,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|(_, a)| a.iter().all(|o| o.passed))
    }

    pub fn render(&self) -> String {
        let mut out = table(&self.metrics);
        for (name, outcomes) in &self.assertions {
            for o in outcomes {
                let mark = if o.passed { "pass" } else { "FAIL" };
                out.push_str(&format!("{mark}  {name}: {} ({})\n", o.name, o.detail));
            }
        }
        out.push_str(&format!("wrote {}\n", self.csv.display()));
        out
    }
}

/// Runs each scenario in a fresh state directory under `out/state/<name>`
/// and writes `out/metrics.csv`.
pub fn run(scenarios: &[ScenarioConfig], topology: Topology, out: &Path) -> Result<Report> {
    let mut metrics = Vec::new();
    let mut assertions = Vec::new();
    for cfg in scenarios {
        let state = out.join("state").join(&cfg.name);
        if state.exists() {
            fs::remove_dir_all(&state).with_context(|| format!("clearing {}", state.display()))?;
        }
        let run = run_scenario(cfg, topology, &state).with_context(|| format!("scenario {}", cfg.name))?;
        assertions.push((cfg.name.clone(), check_assertions(&run)));
        metrics.push(run.metrics);
    }
    let csv = write_csv(out, &metrics)?;
    Ok(Report {
        metrics,
        assertions,
        csv,
    })
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    ScenarioConfig::preset(name).with_context(|| format!("unknown preset `{name}` (demo, zero-fault, drift)"))
}

pub fn export(name: &str) -> Result<String> {
    Ok(canonical::to_pretty(&preset(name)?)?)
}

#[derive(Debug)]
pub struct Setup {
    pub scenario: PathBuf,
    pub cloud: PathBuf,
    pub edge: PathBuf,
    pub model: PathBuf,
}

/// Writes matching scenario, cloud and edge config files plus the
/// warm-start model into `dir`, for running the binaries by hand.
pub fn setup(cfg: &ScenarioConfig, dir: &Path, cloud_addr: &str) -> Result<Setup> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let dir = dir.canonicalize()?;
    let model = warm_start_model(cfg)?.save(&dir.join("warm-start"))?;
    let write = |name: &str, text: String| -> Result<PathBuf> {
        let p = dir.join(name);
        fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    };
    let scenario = write("scenario.json", canonical::to_pretty(cfg)?)?;
    let cloud = write("cloud.json", canonical::to_pretty(&cloud_config(cfg, &dir)?)?)?;
    let edge = write(
        "edge.json",
        canonical::to_pretty(&edge_config(cfg, &dir, model.clone(), cloud_addr.into()))?,
    )?;
    Ok(Setup {
        scenario,
        cloud,
        edge,
        model,
    })
}

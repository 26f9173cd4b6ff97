//! Command implementations behind the `edge`, `cloud` and `sim` binaries.

pub mod cloud_cmd;
pub mod edge_cmd;
pub mod sim_cmd;

use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use anyhow::{Context, Result};
use lambdapm_core::features::SensorSample;
use tracing_subscriber::EnvFilter;

/// Logs to stderr. `RUST_LOG` wins over the verbosity flag.
pub fn init_tracing(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .try_init();
}

/// Parses sample values separated by whitespace or commas. `t` is the
/// position in the input.
pub fn parse_samples(text: &str) -> Result<Vec<SensorSample>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .enumerate()
        .map(|(i, tok)| {
            let value: f64 = tok.parse().with_context(|| format!("sample {i}: `{tok}` is not a number"))?;
            Ok(SensorSample { t: i as u64, value })
        })
        .collect()
}

/// Streams samples from a reader line by line, so a live source can be
/// piped in. Stops at the first unreadable line or bad token and keeps the
/// error for [`SampleReader::finish`].
pub struct SampleReader<R> {
    input: R,
    buf: std::collections::VecDeque<f64>,
    next_t: u64,
    error: Option<anyhow::Error>,
}

impl<R: BufRead> SampleReader<R> {
    pub fn new(input: R) -> Self {
        SampleReader {
            input,
            buf: Default::default(),
            next_t: 0,
            error: None,
        }
    }

    pub fn finish(self) -> Result<u64> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.next_t),
        }
    }
}

impl<R: BufRead> Iterator for SampleReader<R> {
    type Item = SensorSample;

    fn next(&mut self) -> Option<SensorSample> {
        while self.buf.is_empty() {
            if self.error.is_some() {
                return None;
            }
            let mut line = String::new();
            match self.input.read_line(&mut line) {
                Ok(0) => return None,
                Ok(_) => {
                    for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()) {
                        match tok.parse() {
                            Ok(v) => self.buf.push_back(v),
                            Err(_) => {
                                let at = self.next_t + self.buf.len() as u64;
                                self.error = Some(anyhow::anyhow!("sample {at}: `{tok}` is not a number"));
                                break;
                            }
                        }
                    }
                }
                Err(e) => {
                    self.error = Some(e.into());
                    return None;
                }
            }
        }
        let value = self.buf.pop_front()?;
        let t = self.next_t;
        self.next_t += 1;
        Some(SensorSample { t, value })
    }
}

/// Opens a sample file, or stdin for `-`.
pub fn open_samples(path: &Path) -> Result<SampleReader<Box<dyn BufRead>>> {
    let input: Box<dyn BufRead> = if path == Path::new("-") {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        ))
    };
    Ok(SampleReader::new(input))
}

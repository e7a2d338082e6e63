//! Experiment runner behind the `memfield` binary: configuration, orchestration of the
//! library, CSV artifacts and a manifest with checksums.
//!
//! Exit status: 0 all built-in checks pass, 1 some check failed, 2 invalid configuration,
//! 3 runtime abort.

pub mod config;
pub mod experiments;
pub mod output;
pub mod selftest;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

pub use config::{ConfigError, Problem, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}", format_config(path, error))]
    Config { path: String, error: ConfigError },
    #[error("runtime abort: {0}")]
    Runtime(#[from] memfield::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_config(path: &str, e: &ConfigError) -> String {
    match e.line {
        Some(l) => format!("{path}:{l}: {e}"),
        None => format!("{path}: {e}"),
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime(_) | CliError::Io(_) => 3,
        }
    }
}

/// One built-in pass/fail check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable condition, e.g. `< 1e-12`.
    pub condition: String,
    pub pass: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, condition: format!("< {limit:e}"), pass: value < limit }
    }

    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, condition: format!("<= {limit:e}"), pass: value <= limit }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, condition: format!(">= {limit:e}"), pass: value >= limit }
    }

    pub fn above(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, condition: format!("> {limit:e}"), pass: value > limit }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), value: if ok { 1.0 } else { 0.0 }, condition: "== 1".into(), pass: ok }
    }
}

/// CSV artifacts, scalars and checks of one experiment.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub files: Vec<(String, Vec<u8>)>,
    pub scalars: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn scalar(&mut self, name: &str, v: f64) {
        self.scalars.insert(name.to_string(), v);
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|f| f.0 == name).map(|f| f.1.as_slice())
    }
}

/// Run the configured experiment and write its artifacts and `manifest.json` into `out`.
/// Returns the outcome; the exit status is 0 iff `outcome.passed()`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let outcome = experiments::execute(cfg)?;
    output::write_run(cfg, out, &outcome, started.elapsed().as_secs_f64())?;
    Ok(outcome)
}

/// Configure the global worker pool once; later calls keep the first setting.
pub fn init_threads(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
}

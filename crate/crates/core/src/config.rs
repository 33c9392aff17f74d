//! Server and engine configuration (TOML, strict).
//!
//! ```toml
//! [server]
//! tcp = "127.0.0.1:7070"      # newline-delimited probes
//! http = "127.0.0.1:7071"     # POST /probe
//! data = "data"               # directory of CSV files loaded at start
//!
//! [features]                  # all default to true
//! memory = true
//! feedback = true
//! sharing = true
//!
//! [engine]
//! seed = 42                   # sampling seed
//! checkpoint_rows = 1024
//! cost_warning_threshold = 1000000.0
//! feedback_budget_ms = 50
//! memory_max_rows = 10000     # larger exact results are not stored as facts
//! memory_log = "memory.jsonl" # optional append-only fact log
//! trace = "trace.jsonl"       # optional trace output
//!
//! [optimizer]
//! admission_budget = 5.0e7
//! [optimizer.phase_policy]
//! metadata_exploration = { fraction = 0.05, row_cap = 100 }
//! column_statistics = { fraction = 0.2 }
//! partial_solution = { fraction = 0.5 }
//! full_solution = { fraction = 1.0 }
//!
//! [advisor]
//! min_hits = 3
//! window_turns = 20
//! min_cost = 1000.0
//! ```
//!
//! Unknown keys are errors. `PROBEKERNEL_CONFIG` names the file when no
//! path is given on the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{AdvisorConfig, OptimizerConfig};

pub const CONFIG_ENV: &str = "PROBEKERNEL_CONFIG";

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Features {
    #[serde(default = "yes")]
    pub memory: bool,
    #[serde(default = "yes")]
    pub feedback: bool,
    #[serde(default = "yes")]
    pub sharing: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features { memory: true, feedback: true, sharing: true }
    }
}

impl Features {
    pub fn none() -> Self {
        Features { memory: false, feedback: false, sharing: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_tcp")]
    pub tcp: Option<String>,
    #[serde(default)]
    pub http: Option<String>,
    #[serde(default)]
    pub data: Option<PathBuf>,
}

fn default_tcp() -> Option<String> {
    Some("127.0.0.1:7070".into())
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { tcp: default_tcp(), http: None, data: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_rows: usize,
    #[serde(default = "default_cost_threshold")]
    pub cost_warning_threshold: f64,
    #[serde(default = "default_feedback_budget")]
    pub feedback_budget_ms: u64,
    #[serde(default = "default_memory_rows")]
    pub memory_max_rows: usize,
    #[serde(default)]
    pub memory_log: Option<PathBuf>,
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

fn default_seed() -> u64 {
    42
}
fn default_checkpoint() -> usize {
    crate::approx::DEFAULT_CHECKPOINT_ROWS
}
fn default_cost_threshold() -> f64 {
    1.0e6
}
fn default_feedback_budget() -> u64 {
    50
}
fn default_memory_rows() -> usize {
    10_000
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            seed: default_seed(),
            checkpoint_rows: default_checkpoint(),
            cost_warning_threshold: default_cost_threshold(),
            feedback_budget_ms: default_feedback_budget(),
            memory_max_rows: default_memory_rows(),
            memory_log: None,
            trace: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub features: Features,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub advisor: AdvisorConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Explicit path, else `PROBEKERNEL_CONFIG`, else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Config> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(PathBuf::from(p)),
                _ => Ok(Config::default()),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.engine.checkpoint_rows == 0 {
            return Err(Error::Config("engine.checkpoint_rows must be at least 1".into()));
        }
        let p = &self.optimizer.phase_policy;
        for (name, a) in [
            ("metadata_exploration", p.metadata_exploration),
            ("column_statistics", p.column_statistics),
            ("partial_solution", p.partial_solution),
            ("full_solution", p.full_solution),
        ] {
            if !(a.fraction > 0.0 && a.fraction <= 1.0) {
                return Err(Error::Config(format!("phase_policy.{name}.fraction must lie in (0, 1]")));
            }
        }
        if self.advisor.min_hits == 0 || self.advisor.window_turns == 0 {
            return Err(Error::Config("advisor.min_hits and advisor.window_turns must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let doc = crate::config::tests::module_doc_example();
        let c = Config::parse(&doc).unwrap();
        assert_eq!(c.optimizer.phase_policy.metadata_exploration.row_cap, Some(100));
        assert_eq!(c.advisor.min_hits, 3);
        assert_eq!(c.engine.memory_log.as_deref(), Some(Path::new("memory.jsonl")));
    }

    pub(super) fn module_doc_example() -> String {
        let src = include_str!("config.rs");
        let mut out = String::new();
        let mut inside = false;
        for line in src.lines() {
            let l = line.strip_prefix("//!").map(|l| l.strip_prefix(' ').unwrap_or(l));
            match l {
                Some("```toml") => inside = true,
                Some("```") if inside => break,
                Some(t) if inside => {
                    out.push_str(t);
                    out.push('\n');
                }
                _ => {}
            }
        }
        out
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("[engine]\nsed = 1\n").is_err());
        assert!(Config::parse("bogus = true\n").is_err());
        assert!(Config::parse("[optimizer.phase_policy]\nmetadata_exploration = { fraction = 0.0 }\ncolumn_statistics = { fraction = 0.2 }\npartial_solution = { fraction = 0.5 }\nfull_solution = { fraction = 1.0 }\n").is_err());
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }
}

//! Run configuration: a JSON file (from `--config` or `TAILSCOPE_CONFIG`)
//! overlaid by command-line flags, which always win.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tailscope::eval::RankMetric;
use tailscope::RssParams;

use crate::CliError;

/// Environment variable consulted when `--config` is absent.
pub const CONFIG_ENV: &str = "TAILSCOPE_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub ks: Option<Vec<usize>>,
    pub threshold: Option<f64>,
    pub percents: Option<Vec<f64>>,
    pub rank_metric: Option<RankMetric>,
    pub rank_k: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryOptions {
    /// Number of Tail Index categories reported by `rank`.
    pub categories: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub input: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub rss: Option<RssParams>,
    pub neighbor_radius: Option<f64>,
    /// JSON file of perceiver weights for `rank`.
    pub perceiver: Option<PathBuf>,
    /// Intrinsic metric name driving a monotone single-feature perceiver.
    pub perceiver_probe: Option<String>,
    pub memory: MemoryOptions,
    pub eval: EvalOptions,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Loads the file named by `explicit`, else by the environment
    /// variable, else an empty configuration.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = read_to_string(&path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn rss_params(&self) -> Result<RssParams, CliError> {
        let params = self.rss.unwrap_or_default();
        params.validate()?;
        Ok(params)
    }

    /// Checks the invariants that do not depend on the command.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(p) = self
            .eval
            .percents
            .as_ref()
            .and_then(|ps| ps.iter().find(|&&p| !(p > 0.0 && p <= 100.0)))
        {
            return Err(CliError::Usage(format!("percentage {p} outside (0, 100]")));
        }
        if self.workers == Some(0) {
            return Err(CliError::Usage("worker count must be at least 1".into()));
        }
        for path in self.input.iter().chain(&self.perceiver) {
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "input file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

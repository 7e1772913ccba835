use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// What produced a run directory, written as `run-<command>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub command: String,
    pub args: Vec<String>,
    /// Fully resolved configuration of the run.
    pub config: Value,
    pub seed: u64,
    pub version: String,
    pub started: String,
    pub finished: Option<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunDescriptor {
    pub fn start(command: &str, config: Value, seed: u64) -> Self {
        RunDescriptor {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: now(),
            finished: None,
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("run-{command}.json")
    }

    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished = Some(now());
        let path = dir.join(Self::file_name(&self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

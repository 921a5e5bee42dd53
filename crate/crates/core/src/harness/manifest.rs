use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub design: Option<Value>,
    pub model: Option<Value>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub config: Value,
    pub outputs: Vec<String>,
    /// Seconds per named stage.
    pub timings: BTreeMap<String, f64>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self { command: command.to_string(), version: env!("CARGO_PKG_VERSION").to_string(), ..Default::default() }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

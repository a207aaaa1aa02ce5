use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::train::CodebookEvent;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written to the output directory on
/// success and on failure.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub deterministic: bool,
    pub config: ExperimentConfig,
    pub status: String,
    pub error: Option<String>,
    pub codebook_history: Vec<CodebookEvent>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, deterministic: bool) -> Self {
        Self {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            deterministic,
            config: config.clone(),
            status: "running".into(),
            error: None,
            codebook_history: Vec::new(),
            timings: BTreeMap::new(),
            metrics: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    /// Runs `f` and records its wall-clock duration under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::failure::{with_path, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run, written beside its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub threads: usize,
    pub block_size: usize,
    pub version: String,
    pub duration_secs: f64,
    /// Fully resolved settings; rerunning with these reproduces the outputs.
    pub settings: serde_json::Value,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: Option<PathBuf>, seed: u64, threads: usize, block_size: usize) -> Self {
        ManifestBuilder {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                config,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                seed,
                threads,
                block_size,
                version: env!("CARGO_PKG_VERSION").to_string(),
                duration_secs: 0.0,
                settings: serde_json::Value::Null,
            },
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.manifest.inputs.insert(name.to_string(), path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn settings<T: Serialize>(&mut self, s: &T) -> CliResult<()> {
        self.manifest.settings = serde_json::to_value(s)?;
        Ok(())
    }

    /// Writes `manifest.json` into `out_dir` and returns its path.
    pub fn finish(mut self, out_dir: &Path) -> CliResult<PathBuf> {
        self.manifest.duration_secs = self.started.elapsed().as_secs_f64();
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        with_path(std::fs::write(&path, text + "\n"), &path)?;
        Ok(path)
    }
}

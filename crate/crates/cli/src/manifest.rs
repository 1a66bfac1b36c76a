use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sogm_core::pipeline::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub scenario: u64,
    pub segmentation: u64,
    pub model: u64,
    pub classifier: u64,
    pub split: u64,
}

impl Seeds {
    pub fn of(config: &ExperimentConfig) -> Self {
        Seeds {
            scenario: config.scenario.seed,
            segmentation: config.segmentation.rng_seed,
            model: config.model.seed,
            classifier: config.classifier.seed,
            split: config.evaluation.split_seed,
        }
    }
}

/// Everything needed to repeat a command: the full configuration, its
/// seeds, the inputs it read and the files it wrote (relative to the
/// output directory).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub run_id: String,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub elapsed_seconds: f64,
}

pub struct Recorder {
    command: &'static str,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    start: Instant,
}

impl Recorder {
    pub fn new(command: &'static str, out: &Path) -> Self {
        Recorder {
            command,
            out: out.to_path_buf(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Path of a new artifact under the output directory.
    pub fn artifact(&mut self, rel: impl Into<PathBuf>) -> PathBuf {
        let rel = rel.into();
        let full = self.out.join(&rel);
        self.artifacts.push(rel);
        full
    }

    pub fn finish(mut self, config: &ExperimentConfig) -> Result<RunManifest> {
        let config_path = self.artifact(CONFIG_FILE);
        sogm_core::io::write_json(&config_path, config)?;
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            run_id: config.run_id(),
            config: config.clone(),
            seeds: Seeds::of(config),
            inputs: self.inputs,
            artifacts: self.artifacts,
            elapsed_seconds: self.start.elapsed().as_secs_f64(),
        };
        sogm_core::io::write_json(&self.out.join(MANIFEST_FILE), &manifest)
            .with_context(|| format!("writing the {} manifest", self.command))?;
        log::info!("{} finished in {:.2}s (run {})", self.command, manifest.elapsed_seconds, manifest.run_id);
        Ok(manifest)
    }
}

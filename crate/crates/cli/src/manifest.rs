use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub synth: u64,
    pub split: u64,
    pub train: u64,
    pub init: u64,
    pub verifier_weights: u64,
    pub features: u64,
}

impl Seeds {
    pub fn of(cfg: &RunConfig) -> Self {
        Seeds {
            master: cfg.seed,
            synth: cfg.synth_seed,
            split: cfg.split.seed,
            train: cfg.train.seed,
            init: cfg.model.init_seed,
            verifier_weights: cfg.model.verifier.weight_seed,
            features: cfg.model.features.seed,
        }
    }
}

/// Record of one invocation, written before any work starts.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub code_version: String,
    pub started_unix: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, cfg: &RunConfig, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            config: cfg.clone(),
            seeds: Seeds::of(cfg),
            inputs,
            outputs,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    /// Writes to `path` and returns the file name outputs use to refer to it.
    pub fn write(&self, path: &Path) -> anyhow::Result<String> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
    }
}

/// Manifest location for a file output: `<out>.manifest.json`.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

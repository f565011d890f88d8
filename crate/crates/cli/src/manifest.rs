//! Per-command run manifest: resolved config and its hash, seed, versions,
//! input and output file hashes, wall time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub versions: BTreeMap<String, String>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_time_seconds: f64,
    pub config: ExperimentConfig,
}

pub fn hash_file(path: &Path) -> CliResult<FileHash> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(FileHash {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("trajsens".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        (
            "checkpoint_format".to_string(),
            format!(
                "{}/{}",
                trajsens_core::predictor::PARAMS_FORMAT,
                trajsens_core::predictor::PARAMS_VERSION
            ),
        ),
        (
            "scene_format".to_string(),
            format!(
                "{}/{}",
                trajsens_core::scene_io::SCENE_FORMAT,
                trajsens_core::scene_io::SCENE_VERSION
            ),
        ),
    ])
}

impl Manifest {
    pub fn new(
        command: &str,
        cfg: &ExperimentConfig,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        wall_time_seconds: f64,
    ) -> CliResult<Self> {
        Ok(Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            workers: cfg.workers,
            versions: versions(),
            inputs: inputs.iter().map(|p| hash_file(p)).collect::<CliResult<_>>()?,
            outputs: outputs.iter().map(|p| hash_file(p)).collect::<CliResult<_>>()?,
            wall_time_seconds,
            config: cfg.clone(),
        })
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(CliError::io(&path))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

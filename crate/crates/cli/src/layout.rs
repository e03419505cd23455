//! Output directory layout and the data manifest.
//!
//! ```text
//! <root>/data/<task_hash>/{source,target,eval_target}.bin, manifest.json
//! <root>/runs/<config_hash>/config.toml, pretrained.ckpt, pretrain.csv,
//!                           trace.csv, checkpoints/epoch-NNN.ckpt, best.ckpt,
//!                           metrics.csv, summary.json
//! <root>/stopping/<config_hash>/epochs.csv, summary.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use irdan::data::Dataset;
use irdan::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const OUTPUT_ROOT_ENV: &str = "IRDAN_OUTPUT_ROOT";

pub const DATA_FILES: [&str; 3] = ["source.bin", "target.bin", "eval_target.bin"];

pub struct Layout {
    pub root: PathBuf,
    pub config_hash: String,
    pub task_hash: String,
}

impl Layout {
    /// `IRDAN_OUTPUT_ROOT` wins over the config's `output_dir`.
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| cfg.output_dir.clone());
        Layout {
            root,
            config_hash: cfg.hash(),
            task_hash: cfg.task.hash(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data").join(&self.task_hash)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.root.join("runs").join(&self.config_hash)
    }

    pub fn stopping_dir(&self) -> PathBuf {
        self.root.join("stopping").join(&self.config_hash)
    }
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::runtime(path.display(), e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::runtime(path.display(), e))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::data(path.display(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub samples: usize,
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub task_hash: String,
    pub files: Vec<ManifestEntry>,
}

/// Loads source, trainer-facing target and eval target from `dir`, checking
/// that each was generated for `task_hash`.
pub fn load_data(dir: &Path, task_hash: &str) -> CliResult<[Dataset; 3]> {
    let load = |name: &str| -> CliResult<Dataset> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(CliError::Data(format!(
                "{} not found; run gen-data with the same task first",
                path.display()
            )));
        }
        let d = Dataset::load(&path).map_err(|e| CliError::data(path.display(), e))?;
        if d.task_hash != task_hash {
            return Err(CliError::Data(format!(
                "{} was generated for task {}, config describes task {task_hash}",
                path.display(),
                d.task_hash
            )));
        }
        Ok(d)
    };
    Ok([load(DATA_FILES[0])?, load(DATA_FILES[1])?, load(DATA_FILES[2])?])
}

//! Experiment documents: task, training and architecture settings in one TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{AugmentationConfig, InputKind, PdaTaskSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: PdaTaskSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Architecture; the preset for the task's input kind when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Default training settings for `task`, with augmentations matching its input kind.
    pub fn for_task(task: PdaTaskSpec) -> Self {
        let mut train = TrainConfig {
            seed: task.seed,
            ..TrainConfig::default()
        };
        if matches!(task.input_kind, InputKind::Image { .. }) {
            train.augmentation = AugmentationConfig::image_default();
        }
        ExperimentConfig {
            task,
            train,
            model: None,
            output_dir: default_output_dir(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        match (&self.model, &self.task.input_kind) {
            (Some(m), _) => m.clone(),
            (None, InputKind::Vector { dim }) => ModelConfig::vector(*dim, self.task.source_classes),
            (None, InputKind::Image { .. }) => ModelConfig::image(self.task.source_classes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        let model = self.model_config();
        model.validate()?;
        if model.num_classes != self.task.source_classes {
            return Err(Error::Config(format!(
                "model has {} classes, task has {}",
                model.num_classes, self.task.source_classes
            )));
        }
        if model.input_shape() != self.task.input_shape() {
            return Err(Error::Config(format!(
                "model input {:?} does not match task input {:?}",
                model.input_shape(),
                self.task.input_shape()
            )));
        }
        self.train
            .augmentation
            .validate(&self.task.input_shape())
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 prefix over task, training and resolved model settings.
    /// The output directory is not part of the hash.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            task: &'a PdaTaskSpec,
            train: &'a TrainConfig,
            model: ModelConfig,
        }
        let json = serde_json::to_string(&Hashed {
            task: &self.task,
            train: &self.train,
            model: self.model_config(),
        })
        .expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

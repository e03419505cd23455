use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerKind;
use crate::data::AugmentationConfig;
use crate::error::{Error, Result};
use crate::losses::KernelSpec;

/// How a guiding model's logits supervise a student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLabel {
    /// Cross-entropy against the softmax of the guiding logits.
    #[default]
    Soft,
    /// Cross-entropy against the argmax of the guiding logits.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub iters_per_step: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Desired reward `V*`; training stops once the agreement reaches it.
    pub desired_reward: f64,
    pub seed: u64,
    pub pseudo_label: PseudoLabel,
    pub optimizer: OptimizerKind,
    pub kernel: KernelSpec,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 20,
            temperature: 0.5,
            epochs: 10,
            iters_per_step: 20,
            learning_rate: 1e-3,
            batch_size: 64,
            desired_reward: 1.0,
            seed: 0,
            pseudo_label: PseudoLabel::Soft,
            optimizer: OptimizerKind::Adam,
            kernel: KernelSpec::median_heuristic(),
            augmentation: AugmentationConfig::vector_default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, what) in [
            (self.pretrain_epochs, "pretrain_epochs"),
            (self.epochs, "epochs"),
            (self.iters_per_step, "iters_per_step"),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{what} must be positive")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.desired_reward > 0.0 && self.desired_reward <= 1.0) {
            return Err(Error::Config(format!(
                "desired_reward {} not in (0, 1]",
                self.desired_reward
            )));
        }
        if self.kernel.bandwidth_rule == crate::losses::BandwidthRule::Fixed
            && (self.kernel.bandwidths.is_empty() || self.kernel.bandwidths.iter().any(|&b| !(b > 0.0)))
        {
            return Err(Error::Config("fixed kernel needs positive bandwidths".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.temperature, 0.5);
        assert_eq!(c.iters_per_step, 20);
        assert_eq!(c.learning_rate, 1e-3);
    }

    #[test]
    fn bad_values_rejected() {
        let mut c = TrainConfig {
            desired_reward: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        c.desired_reward = 1.2;
        assert!(c.validate().is_err());
        c.desired_reward = 0.9;
        c.epochs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_fills_defaults() {
        let c: TrainConfig = toml::from_str("epochs = 3\npseudo_label = \"hard\"").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.pseudo_label, PseudoLabel::Hard);
        assert_eq!(c.pretrain_epochs, 20);
    }
}

use serde::{Deserialize, Serialize};

use super::layers::NormConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorKind {
    /// Three conv(3×3) + BN + ReLU + 2×2 max-pool blocks (32, 64, 128 channels),
    /// flatten, then a linear layer to `feature_dim`. Input is `1×32×32`.
    ConvStack,
    /// Linear (+ BN) + ReLU per hidden width, then a linear layer to `feature_dim`.
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        #[serde(default)]
        batch_norm: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    #[serde(flatten)]
    pub kind: ExtractorKind,
    pub feature_dim: usize,
    pub projection_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    /// Hidden widths of the residual correction path; the path ends with a
    /// zero-initialized linear layer back to the feature width.
    pub rda_hidden: Vec<usize>,
    /// Hidden widths of each classifier head before the final linear layer to `num_classes`.
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
    pub dropout: f64,
    pub norm: NormConfig,
    /// Initialize both extractors from the same draw (they remain separate parameters).
    pub tied_extractor_init: bool,
}

const BATCH_NORM: bool = false;

impl ModelConfig {
    /// Full-size network for `1×32×32` time-frequency images.
    pub fn image(num_classes: usize) -> Self {
        ModelConfig {
            extractor: ExtractorConfig {
                kind: ExtractorKind::ConvStack,
                feature_dim: 512,
                projection_dim: 128,
            },
            rda_hidden: vec![256, 128, 256],
            classifier_hidden: vec![128, 64],
            num_classes,
            dropout: 0.1,
            norm: NormConfig::default(),
            tied_extractor_init: true,
        }
    }

    /// Narrow network for low-dimensional vector inputs, same topology as [`ModelConfig::image`]'s heads.
    pub fn vector(input_dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            extractor: ExtractorConfig {
                kind: ExtractorKind::Mlp {
                    input_dim,
                    hidden: vec![64],
                    batch_norm: BATCH_NORM,
                },
                feature_dim: 32,
                projection_dim: 16,
            },
            rda_hidden: vec![32, 16, 32],
            classifier_hidden: vec![32, 16],
            num_classes,
            dropout: 0.1,
            norm: NormConfig::default(),
            tied_extractor_init: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::Config(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        positive(self.extractor.feature_dim, "feature_dim")?;
        positive(self.extractor.projection_dim, "projection_dim")?;
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if let ExtractorKind::Mlp { input_dim, hidden, .. } = &self.extractor.kind {
            positive(*input_dim, "input_dim")?;
            for &h in hidden {
                positive(h, "extractor hidden width")?;
            }
        }
        for &h in self.rda_hidden.iter().chain(&self.classifier_hidden) {
            positive(h, "hidden width")?;
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0,1)", self.dropout)));
        }
        Ok(())
    }

    /// Shape of one input sample.
    pub fn input_shape(&self) -> Vec<usize> {
        match &self.extractor.kind {
            ExtractorKind::ConvStack => vec![1, 32, 32],
            ExtractorKind::Mlp { input_dim, .. } => vec![*input_dim],
        }
    }
}

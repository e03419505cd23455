//! Domain-wise models joined by residual adaptation blocks.

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod modules;
pub mod network;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use config::{ExtractorConfig, ExtractorKind, ModelConfig};
pub use layers::{Init, Layer, Mode, NormConfig, Sequential};
pub use modules::{DomainClassifier, FeatureExtractor, RdaBlock};
pub use network::{ensemble_fuse, DomainWiseModel, Irdan, Modes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::Source => Domain::Target,
            Domain::Target => Domain::Source,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Domain> {
        match c {
            0 => Some(Domain::Source),
            1 => Some(Domain::Target),
            _ => None,
        }
    }
}

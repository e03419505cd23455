//! Synthetic partial-domain-adaptation tasks, signal ingestion, augmentation and dataset files.

pub mod augment;
pub mod dataset;
pub mod spectrogram;
pub mod synthetic;

pub use augment::{augment, augment_pair, AugmentOp, AugmentationConfig};
pub use dataset::Dataset;
pub use spectrogram::spectrogram_ingest;
pub use synthetic::{gen_synthetic_pda, InputKind, PdaData, PdaTaskSpec, Shift};

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
//! Interactive residual domain adaptation for partial domain shift.
//!
//! Two domain-wise classifiers share frozen, contrastively pretrained feature
//! extractors and are linked by residual adaptation blocks. A six-step
//! schedule trains one parameter group at a time, and the agreement between
//! the two models on target data drives stopping and model selection.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use metrics::MetricsReport;

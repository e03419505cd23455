//! Deterministic reverse-mode differentiation over `f64` tensors.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod session;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{BatchMoments, BnStats, Graph, Var};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{BnUpdate, Group, ParameterSet};
pub use session::{Session, Update};
pub use tensor::Tensor;

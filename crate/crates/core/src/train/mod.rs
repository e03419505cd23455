//! Contrastive pretraining, the six-step interactive schedule, the agreement
//! reward and model selection.

pub mod baseline;
pub mod config;
pub mod fit;
pub mod pretrain;
pub mod reward;
pub mod schedule;

pub use baseline::{train_source_only_baseline, BaselineEpoch, SourceOnlyBaseline};
pub use config::{PseudoLabel, TrainConfig};
pub use fit::{fit, interactive_train, pretrain, FitResult, StopPolicy, TrainOutcome};
pub use pretrain::{pretrain_contrastive, PretrainLog};
pub use reward::{accuracy, agreement, stopping_check, RewardTrace, Selection, StopDecision, TraceRow, TRACE_COLUMNS};
pub use schedule::{
    accuracy_from_features, reward_from_features, run_epoch, run_step, EpochContext, EpochResult, FeatureCache,
    StepId, StepLog,
};

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::model::Irdan;

/// Fraction of target inputs on which `M_s` and `M_t` agree, both in eval mode.
pub fn compute_reward(model: &Irdan, x_t: &Tensor) -> Result<f64> {
    let zt = model.features(x_t, crate::model::Domain::Target)?;
    reward_from_features(model, &zt)
}

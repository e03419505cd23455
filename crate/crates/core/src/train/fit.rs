//! End-to-end driver: pretraining, interactive epochs, stopping and selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::pretrain::{pretrain_contrastive, PretrainLog};
use super::reward::{stopping_check, RewardTrace, StopDecision};
use super::schedule::{run_epoch, EpochContext, FeatureCache};
use crate::autodiff::OptimizerState;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Domain, Irdan};

/// Whether training may end early once `V ≥ V*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopPolicy {
    Reward,
    /// Always run the full epoch budget (for comparing selection rules).
    FullBudget,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: RewardTrace,
    /// Post-S1 snapshot of every completed epoch.
    pub checkpoints: Vec<Checkpoint>,
    pub best_epoch: u32,
    pub reached_target: bool,
}

impl TrainOutcome {
    pub fn checkpoint(&self, epoch: u32) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.epoch == epoch)
    }

    pub fn best(&self) -> &Checkpoint {
        self.checkpoint(self.best_epoch).expect("best epoch has a checkpoint")
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Contrastively pretrains `G_s` on source inputs and `G_t` on target inputs.
pub fn pretrain(model: &mut Irdan, source: &Dataset, target: &Dataset, cfg: &TrainConfig) -> Result<[PretrainLog; 2]> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, 0);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate)?;
    let s = pretrain_contrastive(model, Domain::Source, &source.inputs, cfg, &mut opt, &mut rng)?;
    let t = pretrain_contrastive(model, Domain::Target, &target.inputs, cfg, &mut opt, &mut rng)?;
    Ok([s, t])
}

/// Runs interactive epochs on a pretrained model until [`stopping_check`] fires.
/// `model` is left in its final-epoch state; the selected model is `outcome.best()`.
#[allow(clippy::too_many_arguments)]
pub fn interactive_train(
    model: &mut Irdan,
    source: &Dataset,
    target: &Dataset,
    eval_target: Option<&Dataset>,
    cfg: &TrainConfig,
    config_hash: &str,
    contrastive: Option<[f64; 2]>,
    policy: StopPolicy,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let eval_labels = match eval_target {
        Some(d) => {
            if d.len() != target.len() {
                return Err(Error::dim("interactive_train", "eval target must match the target samples"));
            }
            Some(d.labels()?)
        }
        None => None,
    };
    let cache = FeatureCache::new(model, &source.inputs, source.labels()?, &target.inputs)?;
    let ctx = EpochContext {
        cache: &cache,
        cfg,
        config_hash,
        contrastive,
        eval_labels,
    };
    let mut rng = rng_for(cfg.seed, 1);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate)?;
    let mut trace = RewardTrace::new(config_hash);
    let mut checkpoints = Vec::new();
    for epoch in 1..=cfg.epochs as u32 {
        let res = run_epoch(epoch, model, &ctx, &mut opt, &mut rng)?;
        trace.push(res.row)?;
        checkpoints.push(res.checkpoint);
        if let StopDecision::Stop {
            best_epoch,
            reached_target,
        } = stopping_check(&trace, cfg)
        {
            if reached_target && policy == StopPolicy::FullBudget && epoch < cfg.epochs as u32 {
                continue;
            }
            return Ok(TrainOutcome {
                trace,
                checkpoints,
                best_epoch,
                reached_target,
            });
        }
    }
    unreachable!("stopping_check fires once the budget is spent")
}

/// Pretraining plus interactive training from a fresh model.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Irdan,
    pub pretrain: [PretrainLog; 2],
    pub outcome: TrainOutcome,
}

pub fn fit(
    model_config: crate::model::ModelConfig,
    source: &Dataset,
    target: &Dataset,
    eval_target: Option<&Dataset>,
    cfg: &TrainConfig,
    config_hash: &str,
    policy: StopPolicy,
) -> Result<FitResult> {
    let mut model = Irdan::new(model_config, cfg.seed)?;
    let logs = pretrain(&mut model, source, target, cfg)?;
    let contrastive = Some([logs[0].final_loss(), logs[1].final_loss()]);
    let outcome = interactive_train(&mut model, source, target, eval_target, cfg, config_hash, contrastive, policy)?;
    Ok(FitResult {
        model,
        pretrain: logs,
        outcome,
    })
}

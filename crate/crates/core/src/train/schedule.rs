//! The six interactive steps and one epoch of them.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{PseudoLabel, TrainConfig};
use super::reward::{agreement, TraceRow};
use crate::autodiff::{Group, OptimizerState, Session, Tensor, Update};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_hard, cross_entropy_soft, mmd_squared};
use crate::model::{Checkpoint, Domain, Irdan, Mode, Modes};

/// One step of the interactive schedule. Each trains exactly one group on exactly one loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepId {
    /// `L_s^s = CE(C_s(z_s), y_s)` over `θ_s`.
    S1TrainCs,
    /// `MMD_s = MMD(z_s, F_s(z_t))` over `φ_s`.
    S2AlignFs,
    /// `L_t^t = l(C_t(z_t), C_s(F_s(z_t)))` over `θ_t`, guided by `M_s`.
    S3GuideCt,
    /// `MMD_t = MMD(F_t(z_s), z_t)` over `φ_t`.
    S4AlignFt,
    /// `L_t^s = CE(C_t(F_t(z_s)), y_s)` over `θ_t`, with `F_t` held fixed.
    S5SourceCt,
    /// `L_{s,t}^t = l(C_t(z_t), C_s(F_s(z_t)))` over `φ_s`; `C_t`'s logits are the fixed target.
    S6FeedbackFs,
}

impl StepId {
    pub const ALL: [StepId; 6] = [
        StepId::S1TrainCs,
        StepId::S2AlignFs,
        StepId::S3GuideCt,
        StepId::S4AlignFt,
        StepId::S5SourceCt,
        StepId::S6FeedbackFs,
    ];

    pub fn id(self) -> &'static str {
        match self {
            StepId::S1TrainCs => "S1_train_Cs",
            StepId::S2AlignFs => "S2_align_Fs",
            StepId::S3GuideCt => "S3_guide_Ct",
            StepId::S4AlignFt => "S4_align_Ft",
            StepId::S5SourceCt => "S5_source_Ct",
            StepId::S6FeedbackFs => "S6_feedback_Fs",
        }
    }

    /// Column name of the step's loss in trace files.
    pub fn loss_name(self) -> &'static str {
        match self {
            StepId::S1TrainCs => "l_s_s",
            StepId::S2AlignFs => "mmd_s",
            StepId::S3GuideCt => "l_t_t",
            StepId::S4AlignFt => "mmd_t",
            StepId::S5SourceCt => "l_t_s",
            StepId::S6FeedbackFs => "l_st_t",
        }
    }

    pub fn group(self) -> Group {
        match self {
            StepId::S1TrainCs => Group::ThetaS,
            StepId::S2AlignFs => Group::PhiS,
            StepId::S3GuideCt => Group::ThetaT,
            StepId::S4AlignFt => Group::PhiT,
            StepId::S5SourceCt => Group::ThetaT,
            StepId::S6FeedbackFs => Group::PhiS,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Frozen-extractor features of the training data, computed once per run.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub zs: Tensor,
    pub ys: Vec<usize>,
    pub zt: Tensor,
}

impl FeatureCache {
    pub fn new(model: &Irdan, xs: &Tensor, ys: &[usize], xt: &Tensor) -> Result<Self> {
        if ys.len() != xs.rows() {
            return Err(Error::dim("feature_cache", format!("{} labels for {} samples", ys.len(), xs.rows())));
        }
        if xs.rows() < 2 || xt.rows() < 2 {
            return Err(Error::Empty("interactive training needs at least two samples per domain".into()));
        }
        Ok(FeatureCache {
            zs: model.features(xs, Domain::Source)?,
            ys: ys.to_vec(),
            zt: model.features(xt, Domain::Target)?,
        })
    }
}

fn draw(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
    sample(rng, n, batch.min(n)).into_vec()
}

fn guided_loss(s: &mut Session<'_>, student: crate::autodiff::Var, teacher: crate::autodiff::Var, mode: PseudoLabel) -> Result<crate::autodiff::Var> {
    match mode {
        PseudoLabel::Soft => cross_entropy_soft(&mut s.graph, student, teacher),
        PseudoLabel::Hard => {
            let labels = s.graph.value(teacher).argmax_rows();
            cross_entropy_hard(&mut s.graph, student, &labels)
        }
    }
}

/// Forward and backward of one iteration of `step` on fresh minibatches.
fn step_update(step: StepId, model: &Irdan, cache: &FeatureCache, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Update> {
    let si = draw(cache.zs.rows(), cfg.batch_size, rng);
    let ti = draw(cache.zt.rows(), cfg.batch_size, rng);
    let zs = cache.zs.select_rows(&si)?;
    let ys: Vec<usize> = si.iter().map(|&i| cache.ys[i]).collect();
    let zt = cache.zt.select_rows(&ti)?;
    let train_c = Modes {
        rda: Mode::Eval,
        classifier: Mode::Train,
    };
    let train_f = Modes {
        rda: Mode::Train,
        classifier: Mode::Eval,
    };

    let mut s = Session::new(&model.params, &[step.group()], rng.gen());
    let loss = match step {
        StepId::S1TrainCs => {
            let z = s.graph.constant(zs);
            let c = model.logits_from_features(&mut s, Domain::Source, z, Domain::Source, train_c)?;
            cross_entropy_hard(&mut s.graph, c, &ys)?
        }
        StepId::S2AlignFs => {
            let a = s.graph.constant(zs);
            let b = s.graph.constant(zt);
            let f = model.rda_forward(&mut s, Domain::Source, b, Domain::Target, Mode::Train)?;
            mmd_squared(&mut s.graph, a, f, &cfg.kernel)?
        }
        StepId::S3GuideCt => {
            let teacher = model.eval_logits(Domain::Source, &zt, Domain::Target)?;
            let teacher = s.graph.constant(teacher);
            let z = s.graph.constant(zt);
            let student = model.logits_from_features(&mut s, Domain::Target, z, Domain::Target, train_c)?;
            guided_loss(&mut s, student, teacher, cfg.pseudo_label)?
        }
        StepId::S4AlignFt => {
            let a = s.graph.constant(zs);
            let b = s.graph.constant(zt);
            let f = model.rda_forward(&mut s, Domain::Target, a, Domain::Source, Mode::Train)?;
            mmd_squared(&mut s.graph, f, b, &cfg.kernel)?
        }
        StepId::S5SourceCt => {
            let z = s.graph.constant(zs);
            let c = model.logits_from_features(&mut s, Domain::Target, z, Domain::Source, train_c)?;
            cross_entropy_hard(&mut s.graph, c, &ys)?
        }
        StepId::S6FeedbackFs => {
            let fixed = model.eval_logits(Domain::Target, &zt, Domain::Target)?;
            let fixed = s.graph.constant(fixed);
            let z = s.graph.constant(zt);
            let guided = model.logits_from_features(&mut s, Domain::Source, z, Domain::Target, train_f)?;
            match cfg.pseudo_label {
                PseudoLabel::Soft => cross_entropy_soft(&mut s.graph, fixed, guided)?,
                PseudoLabel::Hard => {
                    let labels = s.graph.value(fixed).argmax_rows();
                    cross_entropy_hard(&mut s.graph, guided, &labels)?
                }
            }
        }
    };
    s.finish(loss)
}

/// Loss values of the iterations of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: StepId,
    pub losses: Vec<f64>,
}

impl StepLog {
    pub fn mean(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

/// Runs `cfg.iters_per_step` optimizer iterations of `step`, each on freshly
/// sampled minibatches, updating only the step's group.
pub fn run_step(
    step: StepId,
    model: &mut Irdan,
    cache: &FeatureCache,
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<StepLog> {
    if !model.is_pretrained() {
        return Err(Error::NotPretrained(if model.gs.pretrained { "Gt" } else { "Gs" }.into()));
    }
    let group = step.group();
    let mut losses = Vec::with_capacity(cfg.iters_per_step);
    for _ in 0..cfg.iters_per_step {
        let update = step_update(step, model, cache, cfg, rng)?;
        if let Some(name) = update.grads.keys().find(|n| model.params.group_of(n).ok() != Some(group)) {
            return Err(Error::InvalidArgument(format!(
                "{} produced a gradient for `{name}` outside group {group}",
                step.id()
            )));
        }
        losses.push(update.loss);
        model.params.apply(&update)?;
        opt.step(&mut model.params, &[group])?;
    }
    Ok(StepLog { step, losses })
}

/// Fraction of target features on which `M_s` and `M_t` predict the same class.
pub fn reward_from_features(model: &Irdan, zt: &Tensor) -> Result<f64> {
    let cs = model.eval_logits(Domain::Source, zt, Domain::Target)?;
    let ct = model.eval_logits(Domain::Target, zt, Domain::Target)?;
    agreement(&cs.argmax_rows(), &ct.argmax_rows())
}

/// Ensemble accuracy on labeled target features.
pub fn accuracy_from_features(model: &Irdan, zt: &Tensor, labels: &[usize]) -> Result<f64> {
    let (pred, _) = model.ensemble_from_features(zt)?;
    super::reward::accuracy(&pred, labels)
}

/// Result of one epoch: its trace row and the model snapshot taken after S1.
#[derive(Debug, Clone)]
pub struct EpochResult {
    pub row: TraceRow,
    pub checkpoint: Checkpoint,
    pub logs: Vec<StepLog>,
}

/// Everything an epoch needs besides the model and optimizer.
pub struct EpochContext<'a> {
    pub cache: &'a FeatureCache,
    pub cfg: &'a TrainConfig,
    pub config_hash: &'a str,
    /// Final pretraining losses of `G_s` and `G_t`, when known.
    pub contrastive: Option<[f64; 2]>,
    /// Ground-truth labels of `cache.zt`, for scoring only.
    pub eval_labels: Option<&'a [usize]>,
}

/// S1, reward and snapshot, then S2 to S6.
pub fn run_epoch(
    epoch: u32,
    model: &mut Irdan,
    ctx: &EpochContext<'_>,
    opt: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<EpochResult> {
    let mut logs = Vec::with_capacity(6);
    logs.push(run_step(StepId::S1TrainCs, model, ctx.cache, ctx.cfg, opt, rng)?);
    let reward = reward_from_features(model, &ctx.cache.zt)?;
    let target_accuracy = ctx
        .eval_labels
        .map(|l| accuracy_from_features(model, &ctx.cache.zt, l))
        .transpose()?;
    let checkpoint = Checkpoint::capture(model, ctx.config_hash, epoch, reward);
    for &step in &StepId::ALL[1..] {
        logs.push(run_step(step, model, ctx.cache, ctx.cfg, opt, rng)?);
    }
    let mut step_losses = [0.0; 6];
    for log in &logs {
        step_losses[log.step.index()] = log.mean();
    }
    Ok(EpochResult {
        row: TraceRow {
            epoch,
            reward,
            contrastive: ctx.contrastive,
            step_losses,
            checkpoint: checkpoint_id(epoch),
            target_accuracy,
        },
        checkpoint,
        logs,
    })
}

pub fn checkpoint_id(epoch: u32) -> String {
    format!("epoch-{epoch:03}")
}

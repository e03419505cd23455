//! Contrastive pretraining of the general feature extractors.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::autodiff::{OptimizerState, Session, Tensor, Update};
use crate::data::augment_pair;
use crate::error::{Error, Result};
use crate::losses::{nt_xent, ContrastiveBatch};
use crate::model::{Domain, Irdan, Mode};

/// Mean contrastive loss of each pretraining epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainLog {
    pub domain: Domain,
    /// Loss of the untrained extractor on the first rows, before any update.
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl PretrainLog {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&self.initial_loss)
    }
}

/// Shuffled minibatches of `n` rows; a trailing remainder smaller than two
/// rows is folded into the previous batch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

/// NT-Xent loss of one minibatch; both views go through the network as one batch.
fn contrastive_step(
    model: &Irdan,
    domain: Domain,
    x: &Tensor,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Update> {
    let ex = model.extractor(domain);
    let (v1, v2) = augment_pair(x, &cfg.augmentation, rng)?;
    let n = x.rows();
    let mut s = Session::new(&model.params, &[ex.group], rng.gen());
    let a = s.graph.constant(v1);
    let b = s.graph.constant(v2);
    let both = s.graph.concat_rows(a, b)?;
    let proj = ex.project(&mut s, both, Mode::Train)?;
    let originals = s.graph.slice_rows(proj, 0, n)?;
    let augmented = s.graph.slice_rows(proj, n, n)?;
    let loss = nt_xent(
        &mut s.graph,
        &ContrastiveBatch {
            originals,
            augmented,
            temperature: cfg.temperature,
        },
    )?;
    s.finish(loss)
}

/// Trains extractor `domain` on unlabeled `inputs` with the contrastive loss,
/// then marks it pretrained and freezes its group.
pub fn pretrain_contrastive(
    model: &mut Irdan,
    domain: Domain,
    inputs: &Tensor,
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<PretrainLog> {
    let n = inputs.rows();
    if inputs.is_empty() || n < 2 {
        return Err(Error::Empty(format!(
            "contrastive pretraining of {domain:?} extractor needs at least two samples"
        )));
    }
    cfg.augmentation.validate(&inputs.shape()[1..])?;
    let group = model.extractor(domain).group;
    if model.params.is_frozen(group) {
        return Err(Error::FrozenGroup(group.id().into()));
    }

    let probe: Vec<usize> = (0..n.min(cfg.batch_size)).collect();
    let initial_loss = contrastive_step(model, domain, &inputs.select_rows(&probe)?, cfg, &mut rng.clone())?.loss;

    let mut epoch_losses = Vec::with_capacity(cfg.pretrain_epochs);
    for _ in 0..cfg.pretrain_epochs {
        let mut total = 0.0;
        let batches = epoch_batches(n, cfg.batch_size, rng);
        for idx in &batches {
            let update = contrastive_step(model, domain, &inputs.select_rows(idx)?, cfg, rng)?;
            total += update.loss;
            model.params.apply(&update)?;
            opt.step(&mut model.params, &[group])?;
        }
        epoch_losses.push(total / batches.len() as f64);
    }
    model.finish_pretraining(domain);
    Ok(PretrainLog {
        domain,
        initial_loss,
        epoch_losses,
    })
}

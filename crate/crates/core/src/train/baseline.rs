//! Source-only reference: frozen `G_s` plus a classifier trained on labeled
//! source data, applied unchanged to target inputs.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::reward::accuracy;
use crate::autodiff::{Group, OptimizerState, ParameterSet, Session, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::cross_entropy_hard;
use crate::model::{DomainClassifier, Domain, Irdan, Mode};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEpoch {
    pub epoch: u32,
    /// Mean training loss over the epoch's iterations.
    pub loss: f64,
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SourceOnlyBaseline {
    pub classifier: DomainClassifier,
    pub params: ParameterSet,
    pub history: Vec<BaselineEpoch>,
}

impl SourceOnlyBaseline {
    /// Eval-mode logits for `G_s` features.
    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        crate::model::network::chunked(z, self.classifier.num_classes, |chunk| {
            let mut s = Session::inference(&self.params);
            let v = s.graph.constant(chunk);
            let y = self.classifier.forward(&mut s, v, Mode::Eval)?;
            Ok(s.graph.value(y).clone())
        })
    }

    /// Predictions for raw inputs of either domain, always through `G_s`.
    pub fn predict(&self, model: &Irdan, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(&model.features(x, Domain::Source)?)?.argmax_rows())
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.history.last().and_then(|e| e.target_accuracy)
    }
}

/// Trains a fresh classifier on `G_s(x_s)` with the same epoch and iteration
/// budget as one interactive step per epoch.
pub fn train_source_only_baseline(
    model: &Irdan,
    source: &Dataset,
    eval_target: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<SourceOnlyBaseline> {
    let ys = source.labels()?;
    if source.len() < 2 {
        return Err(Error::Empty("baseline needs at least two source samples".into()));
    }
    let zs = model.features(&source.inputs, Domain::Source)?;
    let eval = match eval_target {
        Some(d) => Some((model.features(&d.inputs, Domain::Source)?, d.labels()?)),
        None => None,
    };

    let classifier = DomainClassifier::new("Baseline.C", Group::ThetaS, &model.config);
    let mut params = ParameterSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    classifier.register(&mut params, &mut rng)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate)?;
    let mut out = SourceOnlyBaseline {
        classifier,
        params,
        history: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 1..=cfg.epochs as u32 {
        let mut total = 0.0;
        for _ in 0..cfg.iters_per_step {
            let idx = sample(&mut rng, zs.rows(), cfg.batch_size.min(zs.rows())).into_vec();
            let labels: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
            let update = {
                let mut s = Session::new(&out.params, &[Group::ThetaS], rng.gen());
                let z = s.graph.constant(zs.select_rows(&idx)?);
                let c = out.classifier.forward(&mut s, z, Mode::Train)?;
                let loss = cross_entropy_hard(&mut s.graph, c, &labels)?;
                s.finish(loss)?
            };
            total += update.loss;
            out.params.apply(&update)?;
            opt.step(&mut out.params, &[Group::ThetaS])?;
        }
        let target_accuracy = match &eval {
            Some((zt, yt)) => Some(accuracy(&out.logits(zt)?.argmax_rows(), yt)?),
            None => None,
        };
        out.history.push(BaselineEpoch {
            epoch,
            loss: total / cfg.iters_per_step as f64,
            target_accuracy,
        });
    }
    Ok(out)
}

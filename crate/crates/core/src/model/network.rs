use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::Mode;
use super::modules::{DomainClassifier, FeatureExtractor, RdaBlock};
use super::Domain;
use crate::autodiff::graph::softmax_row;
use crate::autodiff::{Group, ParameterSet, Session, Tensor, Var};
use crate::error::{Error, Result};

/// Rows per forward pass when scoring whole datasets.
pub const EVAL_CHUNK: usize = 256;

/// One domain-wise model: RDA block `F` and classifier `C`. Both extractors
/// are consulted, each for inputs of its own domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainWiseModel {
    pub domain: Domain,
    pub rda: RdaBlock,
    pub classifier: DomainClassifier,
}

/// Modes for the two trainable stages of a domain-wise model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modes {
    pub rda: Mode,
    pub classifier: Mode,
}

impl Modes {
    pub const EVAL: Modes = Modes {
        rda: Mode::Eval,
        classifier: Mode::Eval,
    };
}

/// The full network: extractors `G_s`, `G_t` and domain-wise models `M_s`, `M_t`
/// over one shared [`ParameterSet`] partitioned into the six groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Irdan {
    pub config: ModelConfig,
    pub params: ParameterSet,
    pub gs: FeatureExtractor,
    pub gt: FeatureExtractor,
    pub ms: DomainWiseModel,
    pub mt: DomainWiseModel,
}

impl Irdan {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let gs = FeatureExtractor::new("Gs", Group::EpsS, &config.extractor, config.norm);
        let gt = FeatureExtractor::new("Gt", Group::EpsT, &config.extractor, config.norm);
        let ms = DomainWiseModel {
            domain: Domain::Source,
            rda: RdaBlock::new("Ms.Fs", Group::PhiS, Domain::Source, &config),
            classifier: DomainClassifier::new("Ms.Cs", Group::ThetaS, &config),
        };
        let mt = DomainWiseModel {
            domain: Domain::Target,
            rda: RdaBlock::new("Mt.Ft", Group::PhiT, Domain::Target, &config),
            classifier: DomainClassifier::new("Mt.Ct", Group::ThetaT, &config),
        };

        let mut params = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rng_t = rng.clone();
        gs.register(&mut params, &mut rng)?;
        if !config.tied_extractor_init {
            rng_t = rng.clone();
        }
        gt.register(&mut params, &mut rng_t)?;
        if !config.tied_extractor_init {
            rng = rng_t;
        }
        ms.rda.register(&mut params, &mut rng)?;
        ms.classifier.register(&mut params, &mut rng)?;
        mt.rda.register(&mut params, &mut rng)?;
        mt.classifier.register(&mut params, &mut rng)?;
        params.validate_partition()?;
        Ok(Irdan {
            config,
            params,
            gs,
            gt,
            ms,
            mt,
        })
    }

    pub fn extractor(&self, domain: Domain) -> &FeatureExtractor {
        match domain {
            Domain::Source => &self.gs,
            Domain::Target => &self.gt,
        }
    }

    pub fn extractor_mut(&mut self, domain: Domain) -> &mut FeatureExtractor {
        match domain {
            Domain::Source => &mut self.gs,
            Domain::Target => &mut self.gt,
        }
    }

    pub fn model(&self, which: Domain) -> &DomainWiseModel {
        match which {
            Domain::Source => &self.ms,
            Domain::Target => &self.mt,
        }
    }

    /// Marks an extractor pretrained and freezes its group.
    pub fn finish_pretraining(&mut self, domain: Domain) {
        let ex = self.extractor_mut(domain);
        ex.pretrained = true;
        let g = ex.group;
        self.params.freeze(g);
    }

    pub fn is_pretrained(&self) -> bool {
        self.gs.pretrained && self.gt.pretrained
    }

    /// `G_s(x)` for source inputs, `G_t(x)` for target inputs.
    pub fn extract(&self, s: &mut Session<'_>, x: Var, domain: Domain) -> Result<Var> {
        self.extractor(domain).extract(s, x)
    }

    /// `F(z)` of model `which` for features from `domain`.
    pub fn rda_forward(&self, s: &mut Session<'_>, which: Domain, z: Var, domain: Domain, mode: Mode) -> Result<Var> {
        self.model(which).rda.forward(s, z, domain, mode)
    }

    /// `C(F(z))` of model `which` for extracted features.
    pub fn logits_from_features(
        &self,
        s: &mut Session<'_>,
        which: Domain,
        z: Var,
        domain: Domain,
        modes: Modes,
    ) -> Result<Var> {
        let m = self.model(which);
        let f = m.rda.forward(s, z, domain, modes.rda)?;
        m.classifier.forward(s, f, modes.classifier)
    }

    /// Raw logits `C(F(G(x)))` of model `which`.
    pub fn classifier_logits(
        &self,
        s: &mut Session<'_>,
        which: Domain,
        x: Var,
        domain: Domain,
        modes: Modes,
    ) -> Result<Var> {
        let z = self.extract(s, x, domain)?;
        self.logits_from_features(s, which, z, domain, modes)
    }

    /// Frozen features for a whole dataset, evaluated in chunks.
    pub fn features(&self, x: &Tensor, domain: Domain) -> Result<Tensor> {
        chunked(x, self.config.extractor.feature_dim, |chunk| {
            let mut s = Session::inference(&self.params);
            let v = s.graph.constant(chunk);
            let z = self.extract(&mut s, v, domain)?;
            Ok(s.graph.value(z).clone())
        })
    }

    /// Eval-mode logits of model `which` for precomputed features.
    pub fn eval_logits(&self, which: Domain, z: &Tensor, domain: Domain) -> Result<Tensor> {
        chunked(z, self.config.num_classes, |chunk| {
            let mut s = Session::inference(&self.params);
            let v = s.graph.constant(chunk);
            let y = self.logits_from_features(&mut s, which, v, domain, Modes::EVAL)?;
            Ok(s.graph.value(y).clone())
        })
    }

    /// Fused prediction for target inputs: `softmax(c_s^t + c_t^t)` and its argmax.
    pub fn ensemble_predict(&self, x_t: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        let zt = self.features(x_t, Domain::Target)?;
        self.ensemble_from_features(&zt)
    }

    pub fn ensemble_from_features(&self, zt: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        let cs = self.eval_logits(Domain::Source, zt, Domain::Target)?;
        let ct = self.eval_logits(Domain::Target, zt, Domain::Target)?;
        ensemble_fuse(&cs, &ct)
    }
}

/// `softmax(c_s + c_t)` row-wise, with argmax class ids.
pub fn ensemble_fuse(cs: &Tensor, ct: &Tensor) -> Result<(Vec<usize>, Tensor)> {
    if cs.shape() != ct.shape() || cs.ndim() != 2 {
        return Err(Error::shape("ensemble_predict", cs.shape(), ct.shape()));
    }
    let k = cs.shape()[1];
    let sum: Vec<f64> = cs.data().iter().zip(ct.data()).map(|(a, b)| a + b).collect();
    let mut probs = vec![0.0; sum.len()];
    for r in 0..cs.rows() {
        softmax_row(&sum[r * k..(r + 1) * k], &mut probs[r * k..(r + 1) * k]);
    }
    let probs = Tensor::new(cs.shape(), probs)?;
    Ok((probs.argmax_rows(), probs))
}

/// Applies `f` to consecutive row chunks and stacks the 2-D results.
pub(crate) fn chunked<F>(x: &Tensor, out_cols: usize, mut f: F) -> Result<Tensor>
where
    F: FnMut(Tensor) -> Result<Tensor>,
{
    let n = x.rows();
    let mut data = Vec::with_capacity(n * out_cols);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let out = f(x.select_rows(&idx)?)?;
        data.extend_from_slice(out.data());
        start = end;
    }
    Tensor::new(&[n, out_cols], data)
}

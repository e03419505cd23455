use rand_chacha::ChaCha8Rng;

use super::config::{ExtractorConfig, ExtractorKind, ModelConfig};
use super::layers::{Layer, Mode, Sequential};
use super::Domain;
use crate::autodiff::{Group, ParameterSet, Session, Var};
use crate::error::{Error, Result};

/// General feature extractor `G` plus the projection head used only while pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub name: String,
    pub group: Group,
    pub body: Sequential,
    pub projection_head: Sequential,
    pub feature_dim: usize,
    pub input_shape: Vec<usize>,
    pub pretrained: bool,
}

impl FeatureExtractor {
    pub fn new(name: &str, group: Group, cfg: &ExtractorConfig, norm: super::layers::NormConfig) -> Self {
        let mut body = Sequential::new();
        let input_shape = match &cfg.kind {
            ExtractorKind::ConvStack => {
                let mut c_in = 1;
                for (i, c_out) in [32, 64, 128].into_iter().enumerate() {
                    body.push(Layer::Conv2d {
                        prefix: format!("{name}.conv{}", i + 1),
                        in_channels: c_in,
                        out_channels: c_out,
                        kernel: 3,
                        stride: 1,
                    });
                    body.push(Layer::BatchNorm {
                        prefix: format!("{name}.conv{}.bn", i + 1),
                        channels: c_out,
                        norm,
                    });
                    body.push(Layer::Relu);
                    body.push(Layer::MaxPool2);
                    c_in = c_out;
                }
                // 32 → 30 → 15 → 13 → 6 → 4 → 2
                body.push(Layer::Flatten);
                body.linear(format!("{name}.fc"), 128 * 2 * 2, cfg.feature_dim);
                vec![1, 32, 32]
            }
            ExtractorKind::Mlp {
                input_dim,
                hidden,
                batch_norm,
            } => {
                let mut w = *input_dim;
                for (i, &h) in hidden.iter().enumerate() {
                    let prefix = format!("{name}.layer{}", i + 1);
                    if *batch_norm {
                        body.fc_block(&prefix, w, h, norm, 0.0);
                    } else {
                        body.linear(format!("{prefix}.fc"), w, h).push(Layer::Relu);
                    }
                    w = h;
                }
                body.linear(format!("{name}.fc"), w, cfg.feature_dim);
                vec![*input_dim]
            }
        };
        let mut projection_head = Sequential::new();
        projection_head
            .linear(format!("{name}.proj.fc1"), cfg.feature_dim, cfg.feature_dim)
            .push(Layer::Relu)
            .linear(format!("{name}.proj.fc2"), cfg.feature_dim, cfg.projection_dim);
        FeatureExtractor {
            name: name.to_string(),
            group,
            body,
            projection_head,
            feature_dim: cfg.feature_dim,
            input_shape,
            pretrained: false,
        }
    }

    pub fn register(&self, ps: &mut ParameterSet, rng: &mut ChaCha8Rng) -> Result<()> {
        self.body.register(ps, self.group, rng, &[])?;
        self.projection_head.register(ps, self.group, rng, &[])
    }

    fn check_input(&self, s: &Session<'_>, x: Var) -> Result<()> {
        let shape = s.graph.shape(x);
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let mut want = vec![0];
            want.extend(&self.input_shape);
            return Err(Error::shape("extract", shape, &want));
        }
        Ok(())
    }

    /// Raw features, any mode. Used during pretraining.
    pub fn features(&self, s: &mut Session<'_>, x: Var, mode: Mode) -> Result<Var> {
        self.check_input(s, x)?;
        self.body.forward(s, x, mode)
    }

    /// Projection-head output for the contrastive objective.
    pub fn project(&self, s: &mut Session<'_>, x: Var, mode: Mode) -> Result<Var> {
        let z = self.features(s, x, mode)?;
        self.projection_head.forward(s, z, mode)
    }

    /// Frozen extraction: requires completed pretraining; always eval mode.
    pub fn extract(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        if !self.pretrained {
            return Err(Error::NotPretrained(self.name.clone()));
        }
        self.features(s, x, Mode::Eval)
    }
}

/// Residual domain-adaptation block `F`: identity channel for its own domain,
/// `z + f(z)` for the other domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RdaBlock {
    pub name: String,
    pub group: Group,
    pub own_domain: Domain,
    pub residual_path: Sequential,
    pub dim: usize,
}

impl RdaBlock {
    pub fn new(name: &str, group: Group, own_domain: Domain, cfg: &ModelConfig) -> Self {
        let dim = cfg.extractor.feature_dim;
        let mut path = Sequential::new();
        let mut w = dim;
        for (i, &h) in cfg.rda_hidden.iter().enumerate() {
            path.fc_block(&format!("{name}.layer{}", i + 1), w, h, cfg.norm, cfg.dropout);
            w = h;
        }
        path.linear(format!("{name}.out"), w, dim);
        RdaBlock {
            name: name.to_string(),
            group,
            own_domain,
            residual_path: path,
            dim,
        }
    }

    /// The output layer starts at zero so the block is the identity at initialization.
    pub fn register(&self, ps: &mut ParameterSet, rng: &mut ChaCha8Rng) -> Result<()> {
        let last = self.residual_path.last_index();
        self.residual_path.register(ps, self.group, rng, &[last])
    }

    pub fn forward(&self, s: &mut Session<'_>, z: Var, domain: Domain, mode: Mode) -> Result<Var> {
        let shape = s.graph.shape(z);
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::shape("rda_forward", shape, &[shape[0], self.dim]));
        }
        if domain == self.own_domain {
            return Ok(z);
        }
        let correction = self.residual_path.forward(s, z, mode)?;
        s.graph.add(z, correction)
    }
}

/// Classifier head `C` producing `num_classes` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifier {
    pub name: String,
    pub group: Group,
    pub net: Sequential,
    pub num_classes: usize,
}

impl DomainClassifier {
    pub fn new(name: &str, group: Group, cfg: &ModelConfig) -> Self {
        let mut net = Sequential::new();
        let mut w = cfg.extractor.feature_dim;
        for (i, &h) in cfg.classifier_hidden.iter().enumerate() {
            net.fc_block(&format!("{name}.layer{}", i + 1), w, h, cfg.norm, cfg.dropout);
            w = h;
        }
        net.linear(format!("{name}.out"), w, cfg.num_classes);
        DomainClassifier {
            name: name.to_string(),
            group,
            net,
            num_classes: cfg.num_classes,
        }
    }

    pub fn register(&self, ps: &mut ParameterSet, rng: &mut ChaCha8Rng) -> Result<()> {
        self.net.register(ps, self.group, rng, &[])
    }

    pub fn forward(&self, s: &mut Session<'_>, f: Var, mode: Mode) -> Result<Var> {
        self.net.forward(s, f, mode)
    }
}

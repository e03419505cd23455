use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnStats, BnUpdate, Group, ParameterSet, Session, Tensor, Var};
use crate::error::Result;

/// Whether a module normalizes with batch statistics and applies dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)` for weights and bias.
    Uniform,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            eps: 1e-5,
            momentum: 0.9,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `y = x W + b`, with `W` stored as `[in, out]`.
    Linear {
        prefix: String,
        input: usize,
        output: usize,
    },
    Conv2d {
        prefix: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        prefix: String,
        channels: usize,
        norm: NormConfig,
    },
    Relu,
    Dropout(f64),
    MaxPool2,
    Flatten,
}

impl Layer {
    pub fn register(&self, ps: &mut ParameterSet, group: Group, rng: &mut ChaCha8Rng, init: Init) -> Result<()> {
        match self {
            Layer::Linear { prefix, input, output } => {
                let bound = 1.0 / (*input as f64).sqrt();
                let (w, b) = match init {
                    Init::Uniform => (uniform(rng, input * output, bound), uniform(rng, *output, bound)),
                    Init::Zeros => (vec![0.0; input * output], vec![0.0; *output]),
                };
                ps.insert(format!("{prefix}.weight"), group, Tensor::new(&[*input, *output], w)?)?;
                ps.insert(format!("{prefix}.bias"), group, Tensor::new(&[*output], b)?)?;
            }
            Layer::Conv2d {
                prefix,
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = out_channels * fan_in;
                let (w, b) = match init {
                    Init::Uniform => (uniform(rng, n, bound), uniform(rng, *out_channels, bound)),
                    Init::Zeros => (vec![0.0; n], vec![0.0; *out_channels]),
                };
                let shape = [*out_channels, *in_channels, *kernel, *kernel];
                ps.insert(format!("{prefix}.weight"), group, Tensor::new(&shape, w)?)?;
                ps.insert(format!("{prefix}.bias"), group, Tensor::new(&[*out_channels], b)?)?;
            }
            Layer::BatchNorm { prefix, channels, .. } => {
                let c = *channels;
                ps.insert(format!("{prefix}.gamma"), group, Tensor::full(&[c], 1.0))?;
                ps.insert(format!("{prefix}.beta"), group, Tensor::zeros(&[c]))?;
                ps.insert_buffer(format!("{prefix}.running_mean"), group, Tensor::zeros(&[c]))?;
                ps.insert_buffer(format!("{prefix}.running_var"), group, Tensor::full(&[c], 1.0))?;
            }
            Layer::Relu | Layer::Dropout(_) | Layer::MaxPool2 | Layer::Flatten => {}
        }
        Ok(())
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var, mode: Mode) -> Result<Var> {
        match self {
            Layer::Linear { prefix, .. } => {
                let w = s.param(&format!("{prefix}.weight"))?;
                let b = s.param(&format!("{prefix}.bias"))?;
                let xw = s.graph.matmul(x, w)?;
                s.graph.add(xw, b)
            }
            Layer::Conv2d { prefix, stride, .. } => {
                let w = s.param(&format!("{prefix}.weight"))?;
                let b = s.param(&format!("{prefix}.bias"))?;
                s.graph.conv2d(x, w, Some(b), *stride)
            }
            Layer::BatchNorm { prefix, norm, .. } => {
                let gamma = s.param(&format!("{prefix}.gamma"))?;
                let beta = s.param(&format!("{prefix}.beta"))?;
                match mode {
                    Mode::Train => {
                        let (y, moments) =
                            s.graph.batch_norm(x, gamma, beta, BnStats::Batch { eps: norm.eps })?;
                        if let Some(moments) = moments {
                            s.record_bn(BnUpdate {
                                prefix: prefix.clone(),
                                moments,
                                momentum: norm.momentum,
                            });
                        }
                        Ok(y)
                    }
                    Mode::Eval => {
                        let mean = s.buffer(&format!("{prefix}.running_mean"))?;
                        let var = s.buffer(&format!("{prefix}.running_var"))?;
                        let stats = BnStats::Fixed {
                            mean,
                            var,
                            eps: norm.eps,
                        };
                        Ok(s.graph.batch_norm(x, gamma, beta, stats)?.0)
                    }
                }
            }
            Layer::Relu => s.graph.relu(x),
            Layer::Dropout(p) => {
                if mode == Mode::Eval || !s.dropout_enabled() || *p == 0.0 {
                    return Ok(x);
                }
                let n = s.graph.value(x).len();
                let keep = s.dropout_mask(n, *p);
                s.graph.dropout_with_mask(x, &keep, *p)
            }
            Layer::MaxPool2 => s.graph.maxpool2x2(x),
            Layer::Flatten => s.graph.flatten(x),
        }
    }
}

/// Ordered stack of layers sharing one parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: Layer) -> &mut Self {
        self.layers.push(layer);
        self
    }

    pub fn linear(&mut self, prefix: String, input: usize, output: usize) -> &mut Self {
        self.push(Layer::Linear { prefix, input, output })
    }

    /// Linear → batch norm → ReLU → dropout.
    pub fn fc_block(&mut self, prefix: &str, input: usize, output: usize, norm: NormConfig, dropout: f64) -> &mut Self {
        self.linear(format!("{prefix}.fc"), input, output);
        self.push(Layer::BatchNorm {
            prefix: format!("{prefix}.bn"),
            channels: output,
            norm,
        });
        self.push(Layer::Relu);
        if dropout > 0.0 {
            self.push(Layer::Dropout(dropout));
        }
        self
    }

    /// Registers every layer; the layers at indices in `zero_init` start at zero.
    pub fn register(
        &self,
        ps: &mut ParameterSet,
        group: Group,
        rng: &mut ChaCha8Rng,
        zero_init: &[usize],
    ) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let init = if zero_init.contains(&i) { Init::Zeros } else { Init::Uniform };
            layer.register(ps, group, rng, init)?;
        }
        Ok(())
    }

    pub fn forward(&self, s: &mut Session<'_>, mut x: Var, mode: Mode) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(s, x, mode)?;
        }
        Ok(x)
    }

    pub fn last_index(&self) -> usize {
        self.layers.len() - 1
    }
}

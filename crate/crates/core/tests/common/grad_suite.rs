//! Finite-difference cases for every layer, loss and the composed RDA path.
//! Inputs are registered as parameters so their gradients are checked too.

use irdan::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Group, ParameterSet, Session, Var};
use irdan::losses::{cross_entropy_hard, cross_entropy_soft, mmd_squared, nt_xent, ContrastiveBatch, KernelSpec};
use irdan::model::{Domain, Init, Irdan, Layer, Mode, ModelConfig, Modes, NormConfig};
use rand::Rng;

use super::{quadratic_loss, randn, rng};

pub struct Case {
    pub name: &'static str,
    pub tolerance: f64,
    pub run: fn() -> GradCheckReport,
}

const G: Group = Group::ThetaS;

fn opts() -> GradCheckOptions {
    GradCheckOptions::default()
}

fn layer_case(layers: &[Layer], input_shape: &[usize], tol: f64, seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let mut ps = ParameterSet::new();
    for l in layers {
        l.register(&mut ps, G, &mut r, Init::Uniform).unwrap();
    }
    // move BN affine terms off their identity init
    let names: Vec<String> = ps.names().map(str::to_string).collect();
    for n in names {
        if n.ends_with(".gamma") || n.ends_with(".beta") {
            let t = ps.get_mut(&n).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.5..0.5));
        }
    }
    ps.insert("x", G, randn(&mut r, input_shape)).unwrap();
    let layers = layers.to_vec();
    grad_check(&mut ps, &[G], tol, opts(), move |s: &mut Session<'_>| {
        let mut x = s.param("x")?;
        for l in &layers {
            x = l.forward(s, x, Mode::Train)?;
        }
        quadratic_loss(s, x, seed + 1)
    })
    .unwrap()
}

fn linear() -> GradCheckReport {
    let l = Layer::Linear {
        prefix: "fc".into(),
        input: 5,
        output: 4,
    };
    layer_case(&[l], &[6, 5], 1e-8, 10)
}

fn conv(stride: usize) -> GradCheckReport {
    let l = Layer::Conv2d {
        prefix: "conv".into(),
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        stride,
    };
    layer_case(&[l], &[2, 2, 7, 6], 1e-6, 20 + stride as u64)
}

fn conv_stride1() -> GradCheckReport {
    conv(1)
}

fn conv_stride2() -> GradCheckReport {
    conv(2)
}

fn batch_norm_2d() -> GradCheckReport {
    let l = Layer::BatchNorm {
        prefix: "bn".into(),
        channels: 4,
        norm: NormConfig::default(),
    };
    layer_case(&[l], &[7, 4], 1e-4, 30)
}

fn batch_norm_4d() -> GradCheckReport {
    let l = Layer::BatchNorm {
        prefix: "bn".into(),
        channels: 3,
        norm: NormConfig::default(),
    };
    layer_case(&[l], &[2, 3, 3, 4], 1e-4, 31)
}

fn relu() -> GradCheckReport {
    layer_case(&[Layer::Relu], &[5, 6], 1e-4, 40)
}

fn maxpool_flatten() -> GradCheckReport {
    layer_case(&[Layer::MaxPool2, Layer::Flatten], &[2, 2, 6, 4], 1e-4, 50)
}

fn conv_block() -> GradCheckReport {
    let layers = [
        Layer::Conv2d {
            prefix: "conv".into(),
            in_channels: 1,
            out_channels: 3,
            kernel: 3,
            stride: 1,
        },
        Layer::BatchNorm {
            prefix: "bn".into(),
            channels: 3,
            norm: NormConfig::default(),
        },
        Layer::Relu,
        Layer::MaxPool2,
        Layer::Flatten,
        Layer::Linear {
            prefix: "fc".into(),
            input: 3 * 3 * 3,
            output: 4,
        },
    ];
    layer_case(&layers, &[3, 1, 8, 8], 1e-4, 60)
}

fn dropout_fixed_mask() -> GradCheckReport {
    let mut r = rng(70);
    let mut ps = ParameterSet::new();
    ps.insert("x", G, randn(&mut r, &[4, 5])).unwrap();
    let keep: Vec<bool> = (0..20).map(|_| r.gen_bool(0.7)).collect();
    grad_check(&mut ps, &[G], 1e-8, opts(), move |s: &mut Session<'_>| {
        let x = s.param("x")?;
        let y = s.graph.dropout_with_mask(x, &keep, 0.3)?;
        quadratic_loss(s, y, 71)
    })
    .unwrap()
}

fn two_inputs(seed: u64, a: &[usize], b: &[usize]) -> ParameterSet {
    let mut r = rng(seed);
    let mut ps = ParameterSet::new();
    ps.insert("a", G, randn(&mut r, a)).unwrap();
    ps.insert("b", G, randn(&mut r, b)).unwrap();
    ps
}

fn params2(s: &mut Session<'_>) -> irdan::Result<(Var, Var)> {
    Ok((s.param("a")?, s.param("b")?))
}

fn nt_xent_loss() -> GradCheckReport {
    let mut ps = two_inputs(80, &[5, 4], &[5, 4]);
    grad_check(&mut ps, &[G], 1e-4, opts(), |s: &mut Session<'_>| {
        let (a, b) = params2(s)?;
        let batch = ContrastiveBatch {
            originals: a,
            augmented: b,
            temperature: 0.5,
        };
        nt_xent(&mut s.graph, &batch)
    })
    .unwrap()
}

/// Fixed bandwidths: the median rule re-resolves under perturbation, which
/// finite differences would see but the tape (by design) does not.
fn mmd_loss() -> GradCheckReport {
    let mut ps = two_inputs(90, &[6, 3], &[5, 3]);
    grad_check(&mut ps, &[G], 1e-4, opts(), |s: &mut Session<'_>| {
        let (a, b) = params2(s)?;
        mmd_squared(&mut s.graph, a, b, &KernelSpec::fixed(&[0.5, 2.0, 8.0]))
    })
    .unwrap()
}

fn hard_cross_entropy() -> GradCheckReport {
    let mut ps = two_inputs(100, &[6, 4], &[1, 1]);
    grad_check(&mut ps, &[G], 1e-4, opts(), |s: &mut Session<'_>| {
        let a = s.param("a")?;
        cross_entropy_hard(&mut s.graph, a, &[0, 3, 1, 1, 2, 0])
    })
    .unwrap()
}

fn soft_cross_entropy() -> GradCheckReport {
    let mut ps = two_inputs(110, &[6, 4], &[6, 4]);
    grad_check(&mut ps, &[G], 1e-4, opts(), |s: &mut Session<'_>| {
        let (a, b) = params2(s)?;
        cross_entropy_soft(&mut s.graph, a, b)
    })
    .unwrap()
}

/// `CE(C_s(F_s(z_t)), y)` through BN and both heads, with the residual path
/// moved off its zero init.
fn rda_path() -> GradCheckReport {
    let mut model = Irdan::new(ModelConfig::vector(8, 4), 5).unwrap();
    let mut r = rng(120);
    let names: Vec<String> = model.params.group(Group::PhiS).to_vec();
    for n in names {
        let t = model.params.get_mut(&n).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.3..0.3));
    }
    let z = randn(&mut r, &[6, 32]);
    let m = model.clone();
    grad_check(&mut model.params, &[Group::PhiS, Group::ThetaS], 1e-4, opts(), move |s: &mut Session<'_>| {
        let z = s.graph.constant(z.clone());
        let modes = Modes {
            rda: Mode::Train,
            classifier: Mode::Train,
        };
        let c = m.logits_from_features(s, Domain::Source, z, Domain::Target, modes)?;
        cross_entropy_hard(&mut s.graph, c, &[0, 1, 2, 3, 0, 1])
    })
    .unwrap()
}

pub const CASES: &[Case] = &[
    Case { name: "linear", tolerance: 1e-8, run: linear },
    Case { name: "conv2d stride 1", tolerance: 1e-6, run: conv_stride1 },
    Case { name: "conv2d stride 2", tolerance: 1e-6, run: conv_stride2 },
    Case { name: "batch norm 2-D", tolerance: 1e-4, run: batch_norm_2d },
    Case { name: "batch norm 4-D", tolerance: 1e-4, run: batch_norm_4d },
    Case { name: "relu", tolerance: 1e-4, run: relu },
    Case { name: "max pool + flatten", tolerance: 1e-4, run: maxpool_flatten },
    Case { name: "dropout (fixed mask)", tolerance: 1e-8, run: dropout_fixed_mask },
    Case { name: "conv block", tolerance: 1e-4, run: conv_block },
    Case { name: "nt-xent", tolerance: 1e-4, run: nt_xent_loss },
    Case { name: "mmd", tolerance: 1e-4, run: mmd_loss },
    Case { name: "hard cross-entropy", tolerance: 1e-4, run: hard_cross_entropy },
    Case { name: "soft cross-entropy", tolerance: 1e-4, run: soft_cross_entropy },
    Case { name: "rda path + classifier", tolerance: 1e-4, run: rda_path },
];

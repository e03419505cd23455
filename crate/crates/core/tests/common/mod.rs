#![allow(dead_code)]

use irdan::autodiff::{Session, Tensor, Var};
use irdan::data::{gen_synthetic_pda, PdaData, PdaTaskSpec};
use irdan::model::{Irdan, ModelConfig};
use irdan::train::{self, FeatureCache, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    Tensor::new(shape, data).unwrap()
}

/// `0.5 Σ y² + Σ y·c` for a fixed random `c`: quadratic, so central
/// differences are exact up to rounding.
pub fn quadratic_loss(s: &mut Session<'_>, y: Var, seed: u64) -> irdan::Result<Var> {
    let shape = s.graph.shape(y).to_vec();
    let c = s.graph.constant(randn(&mut rng(seed), &shape));
    let yy = s.graph.mul(y, y)?;
    let half = s.graph.sum(yy)?;
    let half = s.graph.scale(half, 0.5)?;
    let yc = s.graph.mul(y, c)?;
    let lin = s.graph.sum(yc)?;
    s.graph.add(half, lin)
}

/// Standard label split and shift on a smaller sample.
pub fn small_task(seed: u64, per_class: usize) -> (PdaTaskSpec, PdaData) {
    let mut spec = PdaTaskSpec::standard_shift(seed);
    spec.samples_per_class = per_class;
    let data = gen_synthetic_pda(&spec).unwrap();
    (spec, data)
}

pub fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        pretrain_epochs: 2,
        epochs: 3,
        iters_per_step: 3,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

/// A pretrained vector model and the cached features of `data`.
pub fn pretrained(data: &PdaData, cfg: &TrainConfig) -> (Irdan, FeatureCache) {
    let mut model = Irdan::new(ModelConfig::vector(8, 4), cfg.seed).unwrap();
    train::pretrain(&mut model, &data.source, &data.target, cfg).unwrap();
    let cache = FeatureCache::new(
        &model,
        &data.source.inputs,
        data.source.labels().unwrap(),
        &data.target.inputs,
    )
    .unwrap();
    (model, cache)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
pub mod grad_suite;

/// Runs `epochs` full schedules and reports every step that changed a group
/// other than its own (or left its own untouched).
pub fn schedule_isolation_violations(seed: u64, epochs: usize) -> Vec<String> {
    use irdan::autodiff::OptimizerState;
    use irdan::train::{run_step, StepId};

    let (_, data) = small_task(seed, 40);
    let cfg = quick_config(seed);
    let (mut model, cache) = pretrained(&data, &cfg);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate).unwrap();
    let mut r = rng(seed);
    let mut bad = Vec::new();
    for epoch in 1..=epochs {
        for step in StepId::ALL {
            let before = model.params.clone();
            run_step(step, &mut model, &cache, &cfg, &mut opt, &mut r).unwrap();
            let changed = model.params.changed_groups(&before);
            if changed.len() != 1 || !changed.contains(&step.group()) {
                bad.push(format!("epoch {epoch} {}: changed {changed:?}", step.id()));
            }
        }
    }
    bad
}

/// Own-domain RDA output over `batches` random batches: must equal the input
/// bit for bit and pass no gradient to the residual path.
pub fn rda_identity_violations(seed: u64, batches: usize) -> Vec<String> {
    use irdan::autodiff::Group;
    use irdan::model::{Domain, Mode, Modes};

    let mut model = Irdan::new(ModelConfig::vector(8, 4), seed).unwrap();
    let mut r = rng(seed);
    for g in [Group::PhiS, Group::PhiT] {
        for n in model.params.group(g).to_vec() {
            let t = model.params.get_mut(&n).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.5..0.5));
        }
    }
    let groups = [Group::PhiS, Group::PhiT, Group::ThetaS, Group::ThetaT];
    let mut bad = Vec::new();
    for b in 0..batches {
        let which = if b % 2 == 0 { Domain::Source } else { Domain::Target };
        let n = 2 + b % 30;
        let z = randn(&mut r, &[n, 32]);
        let mut s = Session::new(&model.params, &groups, r.gen());
        let zv = s.graph.constant(z.clone());
        let f = model.rda_forward(&mut s, which, zv, which, Mode::Train).unwrap();
        if s.graph.value(f).data() != z.data() {
            bad.push(format!("batch {b}: output differs from input"));
        }
        let modes = Modes {
            rda: Mode::Train,
            classifier: Mode::Train,
        };
        let c = model.logits_from_features(&mut s, which, zv, which, modes).unwrap();
        let loss = quadratic_loss(&mut s, c, b as u64).unwrap();
        let update = s.finish(loss).unwrap();
        let phi = &model.params;
        for (name, g) in &update.grads {
            let grp = phi.group_of(name).unwrap();
            if matches!(grp, Group::PhiS | Group::PhiT) && g.iter().any(|&v| v != 0.0) {
                bad.push(format!("batch {b}: nonzero gradient for {name}"));
            }
        }
    }
    bad
}
pub mod loss_oracles;

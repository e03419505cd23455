mod common;

use common::{randn, rng};
use irdan::autodiff::{Group, Session, Tensor};
use irdan::data::{augment, gen_synthetic_pda, AugmentationConfig, Dataset, InputKind, PdaTaskSpec, Shift};
use irdan::model::{ensemble_fuse, Checkpoint, Domain, Irdan, Mode, ModelConfig};
use irdan::train::agreement;
use irdan::MetricsReport;
use proptest::prelude::*;
use proptest::sample::subsequence;
use rand::Rng;

fn vector_task(seed: u64, classes: usize, subset: Vec<usize>, per_class: usize) -> PdaTaskSpec {
    PdaTaskSpec {
        source_classes: classes,
        target_classes: subset,
        samples_per_class: per_class,
        input_kind: InputKind::Vector { dim: 4 },
        shift: Shift::none(),
        class_separation: 3.0,
        class_sigma: 1.0,
        seed,
    }
}

fn task_strategy() -> impl Strategy<Value = PdaTaskSpec> {
    (2usize..=8, any::<u64>(), 1usize..12).prop_flat_map(|(k, seed, n)| {
        subsequence((0..k).collect::<Vec<_>>(), 1..=k).prop_map(move |sub| vector_task(seed, k, sub, n))
    })
}

fn counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    labels.iter().for_each(|&y| c[y] += 1);
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn target_labels_stay_inside_the_declared_subset(spec in task_strategy()) {
        let d = gen_synthetic_pda(&spec).unwrap();
        let k = spec.source_classes;
        let n = spec.samples_per_class;
        prop_assert_eq!(counts(d.source.labels().unwrap(), k), vec![n; k]);
        let tc = counts(d.eval_target.labels().unwrap(), k);
        for (c, &m) in tc.iter().enumerate() {
            prop_assert_eq!(m, if spec.target_classes.contains(&c) { n } else { 0 });
        }
        prop_assert!(d.target.labels.is_none());
        prop_assert_eq!(&d.target.inputs, &d.eval_target.inputs);
    }

    #[test]
    fn augmentation_keeps_shape_and_labels(spec in task_strategy(), seed in any::<u64>()) {
        let d = gen_synthetic_pda(&spec).unwrap();
        let before = d.source.clone();
        let x = augment(&d.source.inputs, &AugmentationConfig::vector_default(), &mut rng(seed)).unwrap();
        prop_assert_eq!(x.shape(), d.source.inputs.shape());
        prop_assert!(x.data().iter().all(|v| v.is_finite()));
        prop_assert_eq!(&d.source, &before);
        let same = augment(&d.source.inputs, &AugmentationConfig::default(), &mut rng(seed)).unwrap();
        prop_assert_eq!(&same, &d.source.inputs);
    }

    #[test]
    fn dataset_bytes_round_trip(spec in task_strategy()) {
        let d = gen_synthetic_pda(&spec).unwrap();
        for ds in [&d.source, &d.target, &d.eval_target] {
            let bytes = ds.to_bytes();
            let back = Dataset::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, ds);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn agreement_is_a_symmetric_fraction(a in prop::collection::vec(0usize..4, 1..60), seed in any::<u64>()) {
        let mut r = rng(seed);
        let b: Vec<usize> = a.iter().map(|&x| if r.gen_bool(0.5) { x } else { r.gen_range(0..4) }).collect();
        let v = agreement(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, agreement(&b, &a).unwrap());
        prop_assert_eq!(agreement(&a, &a).unwrap(), 1.0);
        prop_assert!(agreement(&a, &b[1..]).is_err());
    }

    #[test]
    fn ensemble_rows_are_distributions(seed in any::<u64>(), n in 1usize..20, k in 2usize..7, spread in 0.1f64..60.0) {
        let mut r = rng(seed);
        let mut cs = randn(&mut r, &[n, k]);
        cs.data_mut().iter_mut().for_each(|v| *v *= spread);
        let ct = randn(&mut r, &[n, k]);
        let (pred, p) = ensemble_fuse(&cs, &ct).unwrap();
        for i in 0..n {
            let row = p.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(row.iter().all(|&v| v <= row[pred[i]]));
        }
    }

    #[test]
    fn metrics_overall_is_the_weighted_class_mean(labels in prop::collection::vec(0usize..5, 1..80), seed in any::<u64>()) {
        let mut r = rng(seed);
        let pred: Vec<usize> = labels.iter().map(|&y| if r.gen_bool(0.6) { y } else { r.gen_range(0..5) }).collect();
        let m = MetricsReport::from_predictions("h", &pred, &labels, 0.5, 1, 0.0).unwrap();
        prop_assert!((m.overall_accuracy - m.weighted_class_mean()).abs() < 1e-12);
        prop_assert_eq!(m.samples(), labels.len());
    }

    /// With rotation and scale off, each target class sits exactly `mean_offset`
    /// away from its source counterpart, up to sampling error.
    #[test]
    fn shift_moves_only_the_mean(seed in any::<u64>(), offset in prop::collection::vec(-2.0f64..2.0, 4)) {
        let n = 400;
        let mut spec = vector_task(seed, 4, vec![1, 2], n);
        spec.shift.mean_offset = offset.clone();
        let d = gen_synthetic_pda(&spec).unwrap();
        let mean_of = |ds: &Dataset, class: usize| {
            let labels = ds.labels().unwrap();
            let mut m = [0.0; 4];
            for (i, _) in labels.iter().enumerate().filter(|(_, &y)| y == class) {
                ds.inputs.row(i).iter().zip(m.iter_mut()).for_each(|(v, acc)| *acc += v / n as f64);
            }
            m
        };
        // difference of two independent means: sd = σ·sqrt(2/n); 5 sd over ~400 comparisons per run
        let tol = 5.0 * spec.class_sigma * (2.0 / n as f64).sqrt();
        for class in [1, 2] {
            let (ms, mt) = (mean_of(&d.source, class), mean_of(&d.eval_target, class));
            for j in 0..4 {
                prop_assert!((mt[j] - ms[j] - offset[j]).abs() <= tol, "class {class} dim {j}");
            }
        }
    }
}

fn perturbed_model(seed: u64) -> Irdan {
    let mut model = Irdan::new(ModelConfig::vector(8, 4), seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for g in [Group::PhiS, Group::PhiT] {
        for n in model.params.group(g).to_vec() {
            let t = model.params.get_mut(&n).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.5..0.5));
        }
    }
    model.gs.pretrained = true;
    model.gt.pretrained = true;
    model
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn own_domain_rda_is_the_identity(seed in any::<u64>(), n in 1usize..16) {
        let model = perturbed_model(seed);
        let z = randn(&mut rng(seed), &[n, 32]);
        for which in [Domain::Source, Domain::Target] {
            for mode in [Mode::Train, Mode::Eval] {
                let mut s = Session::new(&model.params, &[Group::PhiS, Group::PhiT], seed);
                let zv = s.graph.constant(z.clone());
                let f = model.rda_forward(&mut s, which, zv, which, mode).unwrap();
                prop_assert_eq!(s.graph.value(f).data(), z.data());
                // the cross-domain channel must actually differ (train-mode BN needs two rows)
                if n > 1 || mode == Mode::Eval {
                    let g = model.rda_forward(&mut s, which, zv, which.other(), mode).unwrap();
                    prop_assert_ne!(s.graph.value(g).data(), z.data());
                }
            }
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), epoch in 0u32..100, reward in 0.0f64..1.0) {
        let model = perturbed_model(seed);
        let ck = Checkpoint::capture(&model, "abcd", epoch, reward);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        let restored = back.restore().unwrap();
        prop_assert_eq!(&restored.params, &model.params);
        let x = randn(&mut rng(seed), &[5, 8]);
        let a = model.ensemble_predict(&x).unwrap();
        let b = restored.ensemble_predict(&x).unwrap();
        prop_assert_eq!(a.1.data(), b.1.data());
    }

    #[test]
    fn checkpoint_rejects_truncation(seed in any::<u64>(), cut in 1usize..64) {
        let bytes = Checkpoint::capture(&perturbed_model(seed), "abcd", 1, 0.5).to_bytes().unwrap();
        prop_assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }
}

#[test]
fn corrupted_dataset_header_is_rejected() {
    let d = gen_synthetic_pda(&vector_task(1, 3, vec![0], 4)).unwrap();
    let mut bytes = d.source.to_bytes();
    bytes[0] ^= 0xff;
    assert!(Dataset::from_bytes(&bytes).is_err());
    let t = Tensor::zeros(&[0, 4]);
    assert!(Dataset::new(t, Some(vec![1]), Domain::Source, "h").is_err());
}

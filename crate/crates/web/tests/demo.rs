use irdan_web::{run, run_json, scatter, tone_image, MAX_EPOCHS};

#[test]
fn scatter_has_all_source_and_target_classes() {
    let s = scatter(0, 0.8, 1.5).unwrap();
    assert_eq!(s.source.len(), 400);
    assert_eq!(s.target.len(), 200);
    assert!(s.target.iter().all(|p| p[2] == 0.0 || p[2] == 1.0));
    let mut labels: Vec<u32> = s.source.iter().map(|p| p[2] as u32).collect();
    labels.dedup();
    labels.sort();
    labels.dedup();
    assert_eq!(labels, vec![0, 1, 2, 3]);
}

#[test]
fn run_is_deterministic_and_bounded() {
    let a = run_json(1, 0.5, 1.0, 2).unwrap();
    assert_eq!(a, run_json(1, 0.5, 1.0, 2).unwrap());
    let r = run(1, 0.5, 1.0, 2).unwrap();
    assert_eq!(r.epochs.len(), 2);
    assert!(r.epochs.iter().all(|e| (0.0..=1.0).contains(&e.reward)));
    assert!(run(1, 0.5, 1.0, 0).is_err());
    assert!(run(1, 0.5, 1.0, MAX_EPOCHS + 1).is_err());
}

#[test]
fn tone_image_has_a_constant_dominant_row() {
    let img = tone_image(0.1, 0.0, 3).unwrap();
    assert_eq!(img.len(), 32 * 32);
    let argmax_row = |col: usize| (0..32).max_by(|&a, &b| img[a * 32 + col].total_cmp(&img[b * 32 + col])).unwrap();
    let first = argmax_row(4);
    for col in 4..28 {
        assert!(argmax_row(col).abs_diff(first) <= 1);
    }
}

//! Tape results against independent direct computations.

mod common;

use common::{loss_oracles, randn, rng};
use irdan::autodiff::{Graph, Tensor};
use irdan::data::spectrogram_ingest;
use irdan::losses::{cross_entropy_hard, cross_entropy_soft};
use irdan::model::ensemble_fuse;
use rand::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    for _ in 0..20 {
        let (m, k, n) = (r.gen_range(1..7), r.gen_range(1..7), r.gen_range(1..7));
        let a = randn(&mut r, &[m, k]);
        let b = randn(&mut r, &[k, n]);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(va, vb).unwrap();
        let expect = matmul_oracle(a.data(), b.data(), m, k, n);
        for (x, y) in g.value(c).data().iter().zip(&expect) {
            assert!(close(*x, *y, 1e-13));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_oracle(x: &[f64], w: &[f64], b: &[f64], n: usize, c: usize, h: usize, wd: usize, o: usize, k: usize, stride: usize) -> Vec<f64> {
    let ho = (h - k) / stride + 1;
    let wo = (wd - k) / stride + 1;
    let mut out = Vec::with_capacity(n * o * ho * wo);
    for ni in 0..n {
        for oi in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[oi];
                    for ci in 0..c {
                        for p in 0..k {
                            for q in 0..k {
                                acc += w[((oi * c + ci) * k + p) * k + q]
                                    * x[((ni * c + ci) * h + i * stride + p) * wd + j * stride + q];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_sum() {
    let mut r = rng(2);
    for _ in 0..20 {
        let (n, c, o) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
        let k = r.gen_range(1..4);
        let stride = r.gen_range(1..3);
        let (h, wd) = (r.gen_range(k..k + 5), r.gen_range(k..k + 5));
        let x = randn(&mut r, &[n, c, h, wd]);
        let w = randn(&mut r, &[o, c, k, k]);
        let b = randn(&mut r, &[o]);
        let mut g = Graph::new();
        let (vx, vw, vb) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(vx, vw, Some(vb), stride).unwrap();
        let expect = conv_oracle(x.data(), w.data(), b.data(), n, c, h, wd, o, k, stride);
        assert_eq!(g.value(y).len(), expect.len());
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            assert!(close(*a, *e, 1e-12));
        }
    }
}

#[test]
fn maxpool_matches_window_max() {
    let mut r = rng(3);
    let x = randn(&mut r, &[2, 3, 6, 4]);
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.maxpool2x2(v).unwrap();
    assert_eq!(g.shape(y), &[2, 3, 3, 2]);
    let d = x.data();
    let mut idx = 0;
    for plane in 0..6 {
        for i in 0..3 {
            for j in 0..2 {
                let at = |p: usize, q: usize| d[plane * 24 + (2 * i + p) * 4 + 2 * j + q];
                let m = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
                assert_eq!(g.value(y).data()[idx], m);
                idx += 1;
            }
        }
    }
}

#[test]
fn nt_xent_matches_brute_force() {
    let err = loss_oracles::nt_xent_max_error(20);
    assert!(err <= 1e-10, "{err:e}");
}

#[test]
fn mmd_matches_brute_force() {
    let err = loss_oracles::mmd_max_error(20);
    assert!(err <= 1e-10, "{err:e}");
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

#[test]
fn cross_entropies_match_direct_sums() {
    for seed in 0..20 {
        let mut r = rng(300 + seed);
        let (n, k) = (r.gen_range(1..6), r.gen_range(2..6));
        let logits = randn(&mut r, &[n, k]);
        let teacher = randn(&mut r, &[n, k]);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();

        let hard: f64 = (0..n).map(|i| -log_softmax(logits.row(i))[labels[i]]).sum::<f64>() / n as f64;
        let soft: f64 = (0..n)
            .map(|i| {
                let p: Vec<f64> = log_softmax(teacher.row(i)).iter().map(|v| v.exp()).collect();
                let lq = log_softmax(logits.row(i));
                -p.iter().zip(&lq).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;

        let mut g = Graph::new();
        let (s, t) = (g.constant(logits.clone()), g.constant(teacher.clone()));
        let h = cross_entropy_hard(&mut g, s, &labels).unwrap();
        let so = cross_entropy_soft(&mut g, s, t).unwrap();
        assert!((g.value(h).item() - hard).abs() <= 1e-12);
        assert!((g.value(so).item() - soft).abs() <= 1e-12);
    }
}

#[test]
fn ensemble_is_softmax_of_summed_logits() {
    let mut r = rng(4);
    let cs = randn(&mut r, &[5, 3]);
    let ct = randn(&mut r, &[5, 3]);
    let (pred, probs) = ensemble_fuse(&cs, &ct).unwrap();
    #[allow(clippy::needless_range_loop)]
    for i in 0..5 {
        let sum: Vec<f64> = cs.row(i).iter().zip(ct.row(i)).map(|(a, b)| a + b).collect();
        let p: Vec<f64> = log_softmax(&sum).iter().map(|v| v.exp()).collect();
        for (a, b) in probs.row(i).iter().zip(&p) {
            assert!((a - b).abs() < 1e-14);
        }
        let best = (0..3).max_by(|&a, &b| sum[a].total_cmp(&sum[b])).unwrap();
        assert_eq!(pred[i], best);
    }
}

/// Hann-windowed DFT magnitude of one frame, by direct summation.
fn dft_peak_bin(frame: &[f64]) -> usize {
    let n = frame.len();
    let w = |i: usize| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, x) in frame.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                re += w(i) * x * ang.cos();
                im += w(i) * x * ang.sin();
            }
            (k, re.hypot(im))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn pure_tone_gives_one_constant_row_band() {
    let (window, hop, len) = (64, 16, 1024);
    for cycles in [5usize, 10, 21] {
        let f = cycles as f64 / window as f64;
        let signal: Vec<f64> = (0..len).map(|t| (2.0 * std::f64::consts::PI * f * t as f64).sin()).collect();
        let peak = dft_peak_bin(&signal[..window]);
        assert_eq!(peak, cycles);
        // rows span bins 0..=window/2 with corners aligned
        let expected_row = (peak as f64 * 31.0 / (window / 2) as f64).round() as usize;
        let img = spectrogram_ingest(&Tensor::new(&[1, len], signal).unwrap(), window, hop).unwrap();
        let d = img.data();
        for col in 0..32 {
            let row = (0..32).max_by(|&a, &b| d[a * 32 + col].total_cmp(&d[b * 32 + col])).unwrap();
            assert!(row.abs_diff(expected_row) <= 1, "cycles {cycles} col {col}: row {row}");
        }
    }
}

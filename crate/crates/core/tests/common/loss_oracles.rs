//! Brute-force NT-Xent and MMD, straight from their definitions.

use irdan::autodiff::{Graph, Tensor};
use irdan::losses::{mmd_squared, nt_xent, ContrastiveBatch, KernelSpec};
use rand::Rng;

use super::{randn, rng};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Anchor `aug[i]`, positive `orig[i]`, negatives every other row of both sets.
fn nt_xent_oracle(orig: &Tensor, aug: &Tensor, tau: f64) -> f64 {
    let n = orig.rows();
    let mut total = 0.0;
    for i in 0..n {
        let pos = (cosine(aug.row(i), orig.row(i)) / tau).exp();
        let mut denom = pos;
        for j in 0..n {
            if j != i {
                denom += (cosine(aug.row(i), orig.row(j)) / tau).exp();
                denom += (cosine(aug.row(i), aug.row(j)) / tau).exp();
            }
        }
        total += -(pos / denom).ln();
    }
    total / n as f64
}

/// Largest |tape - oracle| over `seeds` random batches.
pub fn nt_xent_max_error(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut r = rng(100 + seed);
        let (n, d) = (r.gen_range(2..9), r.gen_range(2..7));
        let tau = r.gen_range(0.1..1.0);
        let o = randn(&mut r, &[n, d]);
        let a = randn(&mut r, &[n, d]);
        let mut g = Graph::new();
        let batch = ContrastiveBatch {
            originals: g.constant(o.clone()),
            augmented: g.constant(a.clone()),
            temperature: tau,
        };
        let l = nt_xent(&mut g, &batch).unwrap();
        worst = worst.max((g.value(l).item() - nt_xent_oracle(&o, &a, tau)).abs());
    }
    worst
}

fn sqd(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mmd_oracle(a: &Tensor, b: &Tensor, bandwidths: &[f64]) -> f64 {
    let mut total = 0.0;
    for &bw in bandwidths {
        let k = |x: &[f64], y: &[f64]| (-sqd(x, y) / (2.0 * bw)).exp();
        let mean = |p: &Tensor, q: &Tensor| {
            let mut s = 0.0;
            for i in 0..p.rows() {
                for j in 0..q.rows() {
                    s += k(p.row(i), q.row(j));
                }
            }
            s / (p.rows() * q.rows()) as f64
        };
        total += mean(a, a) + mean(b, b) - 2.0 * mean(a, b);
    }
    total
}

/// Median over distinct pairs of the pooled sample, times the fixed scale ladder.
fn median_bandwidths(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let rows: Vec<&[f64]> = (0..a.rows()).map(|i| a.row(i)).chain((0..b.rows()).map(|i| b.row(i))).collect();
    let mut d = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sqd(rows[i], rows[j]));
        }
    }
    let med = super::median(d);
    [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|s| s * med).collect()
}

/// Largest |tape - oracle| over `seeds` sample pairs, fixed and median kernels.
pub fn mmd_max_error(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut r = rng(200 + seed);
        let (n, m, d) = (r.gen_range(2..9), r.gen_range(2..9), r.gen_range(1..6));
        let a = randn(&mut r, &[n, d]);
        let mut b = randn(&mut r, &[m, d]);
        b.data_mut().iter_mut().for_each(|v| *v += 0.7);
        let fixed = [r.gen_range(0.2..3.0), r.gen_range(0.2..3.0)];
        for (kernel, bws) in [
            (KernelSpec::fixed(&fixed), fixed.to_vec()),
            (KernelSpec::median_heuristic(), median_bandwidths(&a, &b)),
        ] {
            let mut g = Graph::new();
            let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
            let l = mmd_squared(&mut g, va, vb, &kernel).unwrap();
            worst = worst.max((g.value(l).item() - mmd_oracle(&a, &b, &bws)).abs());
        }
    }
    worst
}

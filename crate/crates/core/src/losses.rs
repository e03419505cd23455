//! Scalar training objectives, all recorded on the tape.
//!
//! - [`nt_xent`]: contrastive loss for extractor pretraining.
//! - [`mmd_squared`]: multi-bandwidth RBF maximum mean discrepancy (biased V-statistic).
//! - [`cross_entropy_hard`] / [`cross_entropy_soft`]: supervised and logit-guided losses.

use serde::{Deserialize, Serialize};

use crate::autodiff::graph::sq_dist_raw;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Row-aligned projection pair: row `i` of `augmented` is the anchor whose
/// positive is row `i` of `originals`.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveBatch {
    pub originals: Var,
    pub augmented: Var,
    pub temperature: f64,
}

/// Normalized temperature-scaled cross-entropy.
///
/// Each augmented row is an anchor. Its positive is the matching original; its
/// negatives are every other row of both sets (`2N - 2` of them). Similarity is
/// cosine, `d(a, b) = exp(cos(a, b) / τ)`, and the loss is the mean of
/// `-log(d⁺ / (d⁺ + Σ d⁻))` over the anchors.
pub fn nt_xent(g: &mut Graph, batch: &ContrastiveBatch) -> Result<Var> {
    let (so, sa) = (g.shape(batch.originals).to_vec(), g.shape(batch.augmented).to_vec());
    if so.len() != 2 || so != sa {
        return Err(Error::shape("nt_xent", &so, &sa));
    }
    let n = so[0];
    if n < 2 {
        return Err(Error::InvalidArgument(
            "nt_xent needs at least two pairs so negatives exist".into(),
        ));
    }
    if !(batch.temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {}",
            batch.temperature
        )));
    }
    let p = g.normalize_rows(batch.originals)?;
    let q = g.normalize_rows(batch.augmented)?;
    let all = g.concat_rows(p, q)?;
    let all_t = g.transpose(all)?;
    let cos = g.matmul(q, all_t)?;
    let logits = g.scale(cos, 1.0 / batch.temperature)?;
    let positives: Vec<usize> = (0..n).collect();
    let pos = g.pick(logits, &positives)?;
    // column n + i is the anchor itself
    let include: Vec<bool> = (0..n)
        .flat_map(|i| (0..2 * n).map(move |c| c != n + i))
        .collect();
    let lse = g.logsumexp_masked(logits, &include)?;
    let per_anchor = g.sub(lse, pos)?;
    g.mean(per_anchor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Use `bandwidths` as given.
    Fixed,
    /// Median pairwise squared distance of the pooled sample, times each of
    /// [`MEDIAN_SCALES`]. Computed from values only; no gradient flows through it.
    MedianHeuristicMulti,
}

pub const MEDIAN_SCALES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// RBF kernel family `k(x, y) = exp(-‖x - y‖² / (2 b))` over bandwidths `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default)]
    pub bandwidths: Vec<f64>,
    pub bandwidth_rule: BandwidthRule,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::median_heuristic()
    }
}

impl KernelSpec {
    pub fn fixed(bandwidths: &[f64]) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            bandwidths: bandwidths.to_vec(),
            bandwidth_rule: BandwidthRule::Fixed,
        }
    }

    pub fn median_heuristic() -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            bandwidths: Vec::new(),
            bandwidth_rule: BandwidthRule::MedianHeuristicMulti,
        }
    }

    /// Concrete bandwidths for samples `a` (`n×d`) and `b` (`m×d`), row-major.
    pub fn resolve(&self, a: &[f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
        let bw = match self.bandwidth_rule {
            BandwidthRule::Fixed => self.bandwidths.clone(),
            BandwidthRule::MedianHeuristicMulti => {
                let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
                let n = pooled.len() / d;
                let dist = sq_dist_raw(&pooled, &pooled, n, n, d);
                let mut off: Vec<f64> = (0..n)
                    .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                    .map(|(i, j)| dist[i * n + j])
                    .collect();
                off.sort_by(f64::total_cmp);
                let med = match off.len() {
                    0 => 0.0,
                    k if k % 2 == 1 => off[k / 2],
                    k => 0.5 * (off[k / 2 - 1] + off[k / 2]),
                };
                let base = if med > 0.0 { med } else { 1.0 };
                MEDIAN_SCALES.iter().map(|s| s * base).collect()
            }
        };
        if bw.is_empty() || bw.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidths must be positive and nonempty, got {bw:?}"
            )));
        }
        Ok(bw)
    }
}

/// Squared MMD, `Σ_b [mean k(a,a) + mean k(b,b) − 2 mean k(a,b)]`.
pub fn mmd_squared(g: &mut Graph, a: Var, b: Var, kernel: &KernelSpec) -> Result<Var> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::shape("mmd_squared", &sa, &sb));
    }
    if sa[0] < 2 || sb[0] < 2 {
        return Err(Error::Empty(format!(
            "mmd_squared needs at least two rows per sample, got {} and {}",
            sa[0], sb[0]
        )));
    }
    let bandwidths = kernel.resolve(g.value(a).data(), g.value(b).data(), sa[1])?;
    let daa = g.sq_dist(a, a)?;
    let dbb = g.sq_dist(b, b)?;
    let dab = g.sq_dist(a, b)?;
    let mut total: Option<Var> = None;
    for bw in bandwidths {
        let c = -1.0 / (2.0 * bw);
        let mut kmean = |d: Var| -> Result<Var> {
            let s = g.scale(d, c)?;
            let k = g.exp(s)?;
            g.mean(k)
        };
        let kaa = kmean(daa)?;
        let kbb = kmean(dbb)?;
        let kab = kmean(dab)?;
        let within = g.add(kaa, kbb)?;
        let cross = g.scale(kab, 2.0)?;
        let term = g.sub(within, cross)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("resolve guarantees a bandwidth"))
}

/// Mean over rows of `-log softmax(logits)[label]`.
pub fn cross_entropy_hard(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 || labels.len() != s[0] {
        return Err(Error::dim(
            "cross_entropy_hard",
            format!("{} labels for logits {s:?}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            s[1]
        )));
    }
    let lp = g.log_softmax(logits)?;
    let picked = g.pick(lp, labels)?;
    let total = g.sum(picked)?;
    g.scale(total, -1.0 / s[0] as f64)
}

/// Mean over rows of `-Σ_k softmax(teacher)_k · log softmax(student)_k`.
///
/// Gradients reach whichever argument requires them; detach `teacher` to hold it fixed.
pub fn cross_entropy_soft(g: &mut Graph, student: Var, teacher: Var) -> Result<Var> {
    let (ss, st) = (g.shape(student).to_vec(), g.shape(teacher).to_vec());
    if ss.len() != 2 || ss != st {
        return Err(Error::shape("cross_entropy_soft", &ss, &st));
    }
    let p = g.softmax(teacher)?;
    let lq = g.log_softmax(student)?;
    let prod = g.mul(p, lq)?;
    let total = g.sum(prod)?;
    g.scale(total, -1.0 / ss[0] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn c(g: &mut Graph, rows: &[Vec<f64>]) -> Var {
        g.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn nt_xent_orthogonal_is_ln3() {
        let mut g = Graph::new();
        let o = c(&mut g, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]);
        let a = c(&mut g, &[vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]);
        let batch = ContrastiveBatch {
            originals: o,
            augmented: a,
            temperature: 1.0,
        };
        let l = nt_xent(&mut g, &batch).unwrap();
        assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn nt_xent_errors() {
        let mut g = Graph::new();
        let one = c(&mut g, &[vec![1.0, 0.0]]);
        let b = ContrastiveBatch {
            originals: one,
            augmented: one,
            temperature: 0.5,
        };
        assert!(nt_xent(&mut g, &b).is_err());
        let z = c(&mut g, &[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let b = ContrastiveBatch {
            originals: z,
            augmented: z,
            temperature: 0.5,
        };
        assert!(nt_xent(&mut g, &b).is_err());
    }

    #[test]
    fn mmd_closed_form() {
        let mut g = Graph::new();
        // two rows each, identical within a set: reduces to the single-point case
        let a = c(&mut g, &[vec![0.0], vec![0.0]]);
        let b = c(&mut g, &[vec![1.0], vec![1.0]]);
        let m = mmd_squared(&mut g, a, b, &KernelSpec::fixed(&[1.0])).unwrap();
        let expected = 2.0 - 2.0 * (-0.5f64).exp();
        assert!((g.value(m).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn mmd_identical_is_zero() {
        let mut g = Graph::new();
        let rows = vec![vec![0.3, -1.0], vec![2.0, 0.5], vec![-0.7, 0.1]];
        let a = c(&mut g, &rows);
        let b = c(&mut g, &rows);
        let m = mmd_squared(&mut g, a, b, &KernelSpec::median_heuristic()).unwrap();
        assert!(g.value(m).item().abs() < 1e-12);
    }

    #[test]
    fn mmd_errors() {
        let mut g = Graph::new();
        let a = c(&mut g, &[vec![0.0, 1.0], vec![1.0, 1.0]]);
        let b = c(&mut g, &[vec![0.0], vec![1.0]]);
        assert!(mmd_squared(&mut g, a, b, &KernelSpec::fixed(&[1.0])).is_err());
        let one = c(&mut g, &[vec![0.0, 1.0]]);
        assert!(mmd_squared(&mut g, a, one, &KernelSpec::fixed(&[1.0])).is_err());
        assert!(mmd_squared(&mut g, a, a, &KernelSpec::fixed(&[])).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut g = Graph::new();
        let u = c(&mut g, &[vec![0.0; 3], vec![0.0; 3]]);
        let l = cross_entropy_hard(&mut g, u, &[0, 2]).unwrap();
        assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-15);
        let s = c(&mut g, &[vec![30.0, 0.0, 0.0]]);
        let l = cross_entropy_hard(&mut g, s, &[0]).unwrap();
        assert!(g.value(l).item() <= 1e-9);
        assert!(cross_entropy_hard(&mut g, s, &[3]).is_err());
    }

    #[test]
    fn soft_cross_entropy_limits() {
        let mut g = Graph::new();
        let u = c(&mut g, &[vec![0.0; 4]]);
        let l = cross_entropy_soft(&mut g, u, u).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-15);

        let student = c(&mut g, &[vec![0.2, -1.0, 0.7], vec![1.5, 0.3, -0.4]]);
        let teacher = c(&mut g, &[vec![0.0, 0.0, 60.0], vec![60.0, 0.0, 0.0]]);
        let soft = cross_entropy_soft(&mut g, student, teacher).unwrap();
        let hard = cross_entropy_hard(&mut g, student, &[2, 0]).unwrap();
        assert!((g.value(soft).item() - g.value(hard).item()).abs() < 1e-6);

        let bad = c(&mut g, &[vec![0.0; 3]]);
        assert!(cross_entropy_soft(&mut g, student, bad).is_err());
    }
}

//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive in execution order, so the node list is
//! already a topological order and the backward pass is a single reverse sweep.
//! Values are owned by the tape; callers hold cheap [`Var`] handles.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How batch normalization obtains its statistics.
#[derive(Debug, Clone)]
pub enum BnStats<'a> {
    /// Normalize with the batch's own mean and biased variance.
    Batch { eps: f64 },
    /// Normalize with externally supplied (running) statistics.
    Fixed {
        mean: &'a [f64],
        var: &'a [f64],
        eps: f64,
    },
}

/// Per-channel statistics observed by a batch-statistics normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Reshape(Var),
    Dropout(Var, Vec<f64>),
    MaxPool2(Var, Vec<usize>),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    NormalizeRows(Var, Vec<f64>),
    SqDist(Var, Var),
    Pick(Var, Vec<usize>),
    LogSumExpMasked(Var, Vec<bool>),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Reshape(..) => "reshape",
            Op::Dropout(..) => "dropout",
            Op::MaxPool2(..) => "maxpool2x2",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::SqDist(..) => "sq_dist",
            Op::Pick(..) => "pick",
            Op::LogSumExpMasked(..) => "logsumexp_masked",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::SqDist(a, b) | Op::ConcatRows(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Reshape(a)
            | Op::Dropout(a, _)
            | Op::MaxPool2(a, _)
            | Op::NormalizeRows(a, _)
            | Op::Pick(a, _)
            | Op::LogSumExpMasked(a, _)
            | Op::SliceRows(a, _) => vec![*a],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Leaf gradients accumulate across `backward` calls
/// until [`Graph::zero_grad`].
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

/// Maps a flat element index of a 2-D or 4-D tensor to its channel.
fn channel_of(shape: &[usize], e: usize) -> usize {
    match shape.len() {
        2 => e % shape[1],
        _ => (e / (shape[2] * shape[3])) % shape[1],
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of the recorded primitives, in tape order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Records a leaf; it participates in differentiation iff the tensor requires grad.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push_node(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.push_node(t, Op::Leaf, false)
    }

    /// Copies a value into a new constant leaf, blocking gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn push_node(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.zero_grad();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: &[usize], data: Vec<f64>, op: Op) -> Result<Var> {
        let name = op.name();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let rg = op.inputs().iter().any(|&i| self.nodes[i.0].requires_grad);
        let t = Tensor::new(shape, data)?;
        Ok(self.push_node(t, op, rg))
    }

    fn binary_broadcast(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !is_suffix(&sa, &sb) {
            return Err(Error::shape(name, &sa, &sb));
        }
        let bd = self.value(b).data();
        let m = bd.len();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % m]))
            .collect();
        self.push(&sa, out, op)
    }

    /// Elementwise sum; `b` broadcasts when its shape is a trailing suffix of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x * c).collect();
        let shape = t.shape().to_vec();
        self.push(&shape, out, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(&[n, m], out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("transpose", format!("expected 2-D, got {s:?}")));
        }
        let out = transpose_raw(self.value(a).data(), s[0], s[1]);
        self.push(&[s[1], s[0]], out, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = t.data().iter().map(|&x| x.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push(&shape, out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x.exp()).collect();
        let shape = t.shape().to_vec();
        self.push(&shape, out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::dim("log", "non-positive input"));
        }
        let out = t.data().iter().map(|x| x.ln()).collect();
        let shape = t.shape().to_vec();
        self.push(&shape, out, Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(&[1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(&[1], vec![s], Op::Mean(a))
    }

    fn last_axis(&self, a: Var) -> (usize, usize) {
        let s = self.shape(a);
        let cols = *s.last().unwrap();
        (self.value(a).len() / cols, cols)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.last_axis(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            softmax_row(&x[r * cols..(r + 1) * cols], &mut out[r * cols..(r + 1) * cols]);
        }
        let shape = self.shape(a).to_vec();
        self.push(&shape, out, Op::Softmax(a))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.last_axis(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let lse = logsumexp(row.iter().copied());
            for c in 0..cols {
                out[r * cols + c] = row[c] - lse;
            }
        }
        let shape = self.shape(a).to_vec();
        self.push(&shape, out, Op::LogSoftmax(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::shape("reshape", t.shape(), shape));
        }
        let data = t.data().to_vec();
        self.push(shape, data, Op::Reshape(a))
    }

    /// Collapses all but the leading dimension.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let shape = [t.rows(), t.row_len()];
        self.reshape(a, &shape)
    }

    /// Inverted dropout with an explicit keep mask of 0/1 entries.
    pub fn dropout_with_mask(&mut self, a: Var, keep: &[bool], p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout p={p} not in [0,1)")));
        }
        let t = self.value(a);
        if keep.len() != t.len() {
            return Err(Error::dim("dropout", "mask length differs from input"));
        }
        let s = 1.0 / (1.0 - p);
        let mask: Vec<f64> = keep.iter().map(|&k| if k { s } else { 0.0 }).collect();
        let out = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = t.shape().to_vec();
        self.push(&shape, out, Op::Dropout(a, mask))
    }

    /// 2×2 max pooling with stride 2 over NCHW input (odd trailing rows/cols dropped).
    pub fn maxpool2x2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::dim("maxpool2x2", format!("expected NCHW with H,W >= 2, got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut arg = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
        self.push(&[n, c, ho, wo], out, Op::MaxPool2(a, arg))
    }

    /// Valid-padding 2-D cross-correlation. `x` is NCHW, `w` is OCKK, `b` is O.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sw[2] != sw[3] {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        if sx[1] != sw[1] {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, k) = (sw[0], sw[2]);
        if h < k || wd < k {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {k}x{k} exceeds input {h}x{wd}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape("conv2d bias", self.shape(b), &[o]));
            }
        }
        let ho = (h - k) / stride + 1;
        let wo = (wd - k) / stride + 1;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let mut out = vec![0.0; n * o * ho * wo];
        for ni in 0..n {
            for oi in 0..o {
                let ob = (ni * o + oi) * ho * wo;
                if let Some(b) = b {
                    let bv = self.value(b).data()[oi];
                    out[ob..ob + ho * wo].fill(bv);
                }
                for ci in 0..c {
                    let xb = (ni * c + ci) * h * wd;
                    for ki in 0..k {
                        for kj in 0..k {
                            let wv = ws[((oi * c + ci) * k + ki) * k + kj];
                            for i in 0..ho {
                                let xr = xb + (i * stride + ki) * wd + kj;
                                let orow = ob + i * wo;
                                for j in 0..wo {
                                    out[orow + j] += wv * xs[xr + j * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(&[n, o, ho, wo], out, Op::Conv2d { x, w, b, stride })
    }

    /// Batch normalization over the batch axis of 2-D input or over N,H,W of NCHW input.
    ///
    /// With [`BnStats::Batch`] the observed moments are returned for running-statistic updates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BnStats<'_>,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 && sx.len() != 4 {
            return Err(Error::dim("batch_norm", format!("expected 2-D or 4-D, got {sx:?}")));
        }
        let ch = sx[1];
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(Error::shape("batch_norm", &sx, self.shape(gamma)));
        }
        let xs = self.value(x).data();
        let count = xs.len() / ch;
        let (mean, var, eps, batch_stats) = match stats {
            BnStats::Batch { eps } => {
                if sx[0] < 2 {
                    return Err(Error::dim("batch_norm", "batch size 1 in train mode"));
                }
                let mut mean = vec![0.0; ch];
                for (e, v) in xs.iter().enumerate() {
                    mean[channel_of(&sx, e)] += v;
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0; ch];
                for (e, v) in xs.iter().enumerate() {
                    let c = channel_of(&sx, e);
                    var[c] += (v - mean[c]).powi(2);
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                (mean, var, eps, true)
            }
            BnStats::Fixed { mean, var, eps } => {
                if mean.len() != ch || var.len() != ch {
                    return Err(Error::dim("batch_norm", "running statistics length"));
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for (e, v) in xs.iter().enumerate() {
            let c = channel_of(&sx, e);
            xhat[e] = (v - mean[c]) * inv_std[c];
            out[e] = g[c] * xhat[e] + bt[c];
        }
        let moments = batch_stats.then(|| {
            let corr = count as f64 / (count as f64 - 1.0);
            BatchMoments {
                mean: mean.clone(),
                var: var.iter().map(|v| v * corr).collect(),
            }
        });
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        };
        Ok((self.push(&sx, out, op)?, moments))
    }

    /// Scales every row of a 2-D tensor to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("normalize_rows", format!("expected 2-D, got {s:?}")));
        }
        let x = self.value(a).data();
        let mut norms = Vec::with_capacity(s[0]);
        let mut out = vec![0.0; x.len()];
        for r in 0..s[0] {
            let row = &x[r * s[1]..(r + 1) * s[1]];
            let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm == 0.0 {
                return Err(Error::dim("normalize_rows", format!("row {r} has zero norm")));
            }
            for c in 0..s[1] {
                out[r * s[1] + c] = row[c] / nrm;
            }
            norms.push(nrm);
        }
        self.push(&s, out, Op::NormalizeRows(a, norms))
    }

    /// Pairwise squared Euclidean distances between rows: `[N,d] × [M,d] → [N,M]`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("sq_dist", &sa, &sb));
        }
        let out = sq_dist_raw(self.value(a).data(), self.value(b).data(), sa[0], sb[0], sa[1]);
        self.push(&[sa[0], sb[0]], out, Op::SqDist(a, b))
    }

    /// Selects `x[i, idx[i]]` for every row of a 2-D tensor.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || idx.len() != s[0] {
            return Err(Error::dim("pick", format!("{} indices for shape {s:?}", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[1]) {
            return Err(Error::InvalidArgument(format!(
                "index {bad} out of range for {} columns",
                s[1]
            )));
        }
        let x = self.value(a).data();
        let out = idx.iter().enumerate().map(|(r, &c)| x[r * s[1] + c]).collect();
        self.push(&[s[0]], out, Op::Pick(a, idx.to_vec()))
    }

    /// Row-wise log-sum-exp over the entries where `include` is true.
    pub fn logsumexp_masked(&mut self, a: Var, include: &[bool]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || include.len() != s[0] * s[1] {
            return Err(Error::dim("logsumexp_masked", "mask does not match input"));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(s[0]);
        for r in 0..s[0] {
            let row = (0..s[1])
                .filter(|&c| include[r * s[1] + c])
                .map(|c| x[r * s[1] + c]);
            let v = logsumexp(row);
            if v == f64::NEG_INFINITY {
                return Err(Error::dim("logsumexp_masked", format!("row {r} fully masked")));
            }
            out.push(v);
        }
        self.push(&[s[0]], out, Op::LogSumExpMasked(a, include.to_vec()))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[1..] != sb[1..] {
            return Err(Error::shape("concat_rows", &sa, &sb));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let mut shape = sa.clone();
        shape[0] += sb[0];
        self.push(&shape, data, Op::ConcatRows(a, b))
    }

    /// Rows `start..start + len` along the leading dimension.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if len == 0 || start + len > t.rows() {
            return Err(Error::dim(
                "slice_rows",
                format!("rows {start}..{} of {}", start + len, t.rows()),
            ));
        }
        let w = t.row_len();
        let data = t.data()[start * w..(start + len) * w].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        self.push(&shape, data, Op::SliceRows(a, start))
    }

    /// Reverse sweep from a scalar loss; leaf gradients accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                lt.shape()
            )));
        }
        if !self.requires_grad(loss) {
            return Err(Error::Backward(
                "loss is detached from every differentiable leaf".into(),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(dy) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[id] {
                    Some(g) => g.iter_mut().zip(&dy).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(dy),
                }
                continue;
            }
            for (input, g) in self.local_grads(id, &dy) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, id: usize, dy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        let y = node.value.data();
        let v = |x: Var| self.nodes[x.0].value.data();
        let rg = |x: Var| self.nodes[x.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let m = v(*b).len();
                let mut gb = vec![0.0; m];
                if rg(*b) {
                    for (i, d) in dy.iter().enumerate() {
                        gb[i % m] += sign * d;
                    }
                }
                vec![(*a, dy.to_vec()), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (v(*a), v(*b));
                let m = xb.len();
                let ga = dy.iter().enumerate().map(|(i, d)| d * xb[i % m]).collect();
                let mut gb = vec![0.0; m];
                if rg(*b) {
                    for (i, d) in dy.iter().enumerate() {
                        gb[i % m] += d * xa[i];
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, c) => vec![(*a, dy.iter().map(|d| d * c).collect())],
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let mut out = vec![];
                if rg(*a) {
                    let bt = transpose_raw(v(*b), k, m);
                    out.push((*a, matmul_raw(dy, &bt, n, m, k)));
                }
                if rg(*b) {
                    let at = transpose_raw(v(*a), n, k);
                    out.push((*b, matmul_raw(&at, dy, k, n, m)));
                }
                out
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                vec![(*a, transpose_raw(dy, s[1], s[0]))]
            }
            Op::Relu(a) => {
                let x = v(*a);
                let g = dy
                    .iter()
                    .zip(x)
                    .map(|(d, &xi)| if xi > 0.0 { *d } else { 0.0 })
                    .collect();
                vec![(*a, g)]
            }
            Op::Exp(a) => vec![(*a, dy.iter().zip(y).map(|(d, yi)| d * yi).collect())],
            Op::Log(a) => vec![(*a, dy.iter().zip(v(*a)).map(|(d, x)| d / x).collect())],
            Op::Sum(a) => vec![(*a, vec![dy[0]; v(*a).len()])],
            Op::Mean(a) => {
                let n = v(*a).len();
                vec![(*a, vec![dy[0] / n as f64; n])]
            }
            Op::Softmax(a) => {
                let cols = *self.shape(*a).last().unwrap();
                let mut g = vec![0.0; y.len()];
                for r in 0..y.len() / cols {
                    let rs = r * cols..(r + 1) * cols;
                    let dot: f64 = dy[rs.clone()].iter().zip(&y[rs.clone()]).map(|(d, p)| d * p).sum();
                    for i in rs {
                        g[i] = y[i] * (dy[i] - dot);
                    }
                }
                vec![(*a, g)]
            }
            Op::LogSoftmax(a) => {
                let cols = *self.shape(*a).last().unwrap();
                let mut g = vec![0.0; y.len()];
                for r in 0..y.len() / cols {
                    let rs = r * cols..(r + 1) * cols;
                    let total: f64 = dy[rs.clone()].iter().sum();
                    for i in rs {
                        g[i] = dy[i] - y[i].exp() * total;
                    }
                }
                vec![(*a, g)]
            }
            Op::Reshape(a) => vec![(*a, dy.to_vec())],
            Op::Dropout(a, mask) => vec![(*a, dy.iter().zip(mask).map(|(d, m)| d * m).collect())],
            Op::MaxPool2(a, arg) => {
                let mut g = vec![0.0; v(*a).len()];
                for (d, &i) in dy.iter().zip(arg) {
                    g[i] += d;
                }
                vec![(*a, g)]
            }
            Op::Conv2d { x, w, b, stride } => self.conv2d_grads(*x, *w, *b, *stride, dy),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let sx = self.shape(*x);
                let ch = sx[1];
                let count = (xhat.len() / ch) as f64;
                let g = v(*gamma);
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for (e, d) in dy.iter().enumerate() {
                    let c = channel_of(sx, e);
                    dgamma[c] += d * xhat[e];
                    dbeta[c] += d;
                }
                let mut dx = vec![0.0; dy.len()];
                if *batch_stats {
                    // dgamma[c] = sum(dy*xhat), dbeta[c] = sum(dy) double as the reductions
                    for (e, d) in dy.iter().enumerate() {
                        let c = channel_of(sx, e);
                        dx[e] = g[c] * inv_std[c] / count
                            * (count * d - dbeta[c] - xhat[e] * dgamma[c]);
                    }
                } else {
                    for (e, d) in dy.iter().enumerate() {
                        let c = channel_of(sx, e);
                        dx[e] = d * g[c] * inv_std[c];
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::NormalizeRows(a, norms) => {
                let cols = self.shape(*a)[1];
                let mut g = vec![0.0; y.len()];
                for (r, nrm) in norms.iter().enumerate() {
                    let rs = r * cols..(r + 1) * cols;
                    let dot: f64 = dy[rs.clone()].iter().zip(&y[rs.clone()]).map(|(d, u)| d * u).sum();
                    for i in rs {
                        g[i] = (dy[i] - y[i] * dot) / nrm;
                    }
                }
                vec![(*a, g)]
            }
            Op::SqDist(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, m, d) = (sa[0], sb[0], sa[1]);
                let (xa, xb) = (v(*a), v(*b));
                let mut ga = vec![0.0; n * d];
                let mut gb = vec![0.0; m * d];
                for i in 0..n {
                    for j in 0..m {
                        let w = 2.0 * dy[i * m + j];
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            let diff = w * (xa[i * d + k] - xb[j * d + k]);
                            ga[i * d + k] += diff;
                            gb[j * d + k] -= diff;
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Pick(a, idx) => {
                let cols = self.shape(*a)[1];
                let mut g = vec![0.0; v(*a).len()];
                for (r, &c) in idx.iter().enumerate() {
                    g[r * cols + c] = dy[r];
                }
                vec![(*a, g)]
            }
            Op::LogSumExpMasked(a, include) => {
                let x = v(*a);
                let cols = self.shape(*a)[1];
                let mut g = vec![0.0; x.len()];
                for (r, lse) in y.iter().enumerate() {
                    for c in 0..cols {
                        let i = r * cols + c;
                        if include[i] {
                            g[i] = dy[r] * (x[i] - lse).exp();
                        }
                    }
                }
                vec![(*a, g)]
            }
            Op::ConcatRows(a, b) => {
                let na = v(*a).len();
                vec![(*a, dy[..na].to_vec()), (*b, dy[na..].to_vec())]
            }
            Op::SliceRows(a, start) => {
                let src = v(*a);
                let w = self.nodes[a.0].value.row_len();
                let mut g = vec![0.0; src.len()];
                g[start * w..start * w + dy.len()].copy_from_slice(dy);
                vec![(*a, g)]
            }
        }
    }

    fn conv2d_grads(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        dy: &[f64],
    ) -> Vec<(Var, Vec<f64>)> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, k) = (sw[0], sw[2]);
        let ho = (h - k) / stride + 1;
        let wo = (wd - k) / stride + 1;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let need_x = self.requires_grad(x);
        let mut gx = vec![0.0; xs.len()];
        let mut gw = vec![0.0; ws.len()];
        for ni in 0..n {
            for oi in 0..o {
                let ob = (ni * o + oi) * ho * wo;
                for ci in 0..c {
                    let xb = (ni * c + ci) * h * wd;
                    for ki in 0..k {
                        for kj in 0..k {
                            let widx = ((oi * c + ci) * k + ki) * k + kj;
                            let wv = ws[widx];
                            let mut acc = 0.0;
                            for i in 0..ho {
                                let xr = xb + (i * stride + ki) * wd + kj;
                                let orow = ob + i * wo;
                                for j in 0..wo {
                                    let d = dy[orow + j];
                                    acc += d * xs[xr + j * stride];
                                    if need_x {
                                        gx[xr + j * stride] += d * wv;
                                    }
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
        let mut out = vec![(x, gx), (w, gw)];
        if let Some(b) = b {
            let mut gb = vec![0.0; o];
            for ni in 0..n {
                for (oi, g) in gb.iter_mut().enumerate() {
                    let ob = (ni * o + oi) * ho * wo;
                    *g += dy[ob..ob + ho * wo].iter().sum::<f64>();
                }
            }
            out.push((b, gb));
        }
        out
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub(crate) fn sq_dist_raw(a: &[f64], b: &[f64], n: usize, m: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..d).map(|k| (a[i * d + k] - b[j * d + k]).powi(2)).sum();
        }
    }
    out
}

pub(crate) fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_row(x: &[f64], out: &mut [f64]) {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - mx).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

//! Seeded partial-domain-shift tasks.
//!
//! Source data covers all `K` classes; target data covers only
//! `target_classes` and is passed through a covariate shift. Class-conditional
//! generators are shared across domains, so labels keep their meaning.
//!
//! Vector tasks draw `x ~ N(μ_k, σ² I)` with `μ_k = separation · e_k` (and
//! `-separation · e_{k-d}` once `k ≥ d`). The target shift maps
//! `x ↦ scale · R(x) + mean_offset + noise`, where `R` rotates every coordinate
//! plane `(0,1), (2,3), …` by `rotation_angle`.
//!
//! Image tasks synthesize tone bursts of length `signal_len` whose frequency
//! depends on the class, then convert them with
//! [`spectrogram_ingest`](super::spectrogram::spectrogram_ingest). For these the
//! shift acts on the signal: `mean_offset[0]` is a relative frequency change,
//! `mean_offset[1]` a DC offset, `rotation_angle` a phase offset, `scale` the
//! amplitude and `noise_sigma` additive noise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::Dataset;
use super::spectrogram::spectrogram_ingest;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::Domain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind {
    Vector { dim: usize },
    Image { signal_len: usize, window: usize, hop: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    #[serde(default)]
    pub mean_offset: Vec<f64>,
    #[serde(default)]
    pub rotation_angle: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

fn one() -> f64 {
    1.0
}

impl Shift {
    pub fn none() -> Self {
        Shift {
            mean_offset: Vec::new(),
            rotation_angle: 0.0,
            scale: 1.0,
            noise_sigma: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mean_offset.iter().all(|&v| v == 0.0)
            && self.rotation_angle == 0.0
            && self.scale == 1.0
            && self.noise_sigma == 0.0
    }
}

impl Default for Shift {
    fn default() -> Self {
        Shift::none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdaTaskSpec {
    pub source_classes: usize,
    pub target_classes: Vec<usize>,
    pub samples_per_class: usize,
    pub input_kind: InputKind,
    #[serde(default)]
    pub shift: Shift,
    /// Distance of each class mean from the origin (vector tasks).
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    /// Within-class standard deviation.
    #[serde(default = "one")]
    pub class_sigma: f64,
    pub seed: u64,
}

fn default_separation() -> f64 {
    4.0
}

/// Source, trainer-facing target (unlabeled) and labeled evaluation target.
#[derive(Debug, Clone, PartialEq)]
pub struct PdaData {
    pub source: Dataset,
    pub target: Dataset,
    pub eval_target: Dataset,
}

impl PdaTaskSpec {
    /// 4 source classes, target `{0, 1}`, mean offset plus rotation, 8-D Gaussians.
    pub fn standard_shift(seed: u64) -> Self {
        PdaTaskSpec {
            source_classes: 4,
            target_classes: vec![0, 1],
            samples_per_class: 200,
            input_kind: InputKind::Vector { dim: 8 },
            shift: Shift {
                mean_offset: vec![1.5, -1.5, 1.5, -1.5, 1.5, -1.5, 1.5, -1.5],
                rotation_angle: 0.8,
                scale: 1.0,
                noise_sigma: 0.0,
            },
            class_separation: 4.0,
            class_sigma: 1.0,
            seed,
        }
    }

    /// Full label space and no shift.
    pub fn control(seed: u64) -> Self {
        PdaTaskSpec {
            source_classes: 4,
            target_classes: vec![0, 1, 2, 3],
            samples_per_class: 200,
            input_kind: InputKind::Vector { dim: 8 },
            shift: Shift::none(),
            class_separation: 4.0,
            class_sigma: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_classes < 2 {
            return Err(Error::Config("source_classes must be at least 2".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        if self.target_classes.is_empty() {
            return Err(Error::Config("target_classes must be nonempty".into()));
        }
        let mut seen = vec![false; self.source_classes];
        for &c in &self.target_classes {
            if c >= self.source_classes {
                return Err(Error::Config(format!(
                    "target class {c} is not in the source label space [0, {})",
                    self.source_classes
                )));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::Config(format!("target class {c} listed twice")));
            }
        }
        if !(self.class_sigma >= 0.0) || !(self.shift.scale > 0.0) || !(self.shift.noise_sigma >= 0.0) {
            return Err(Error::Config("sigma, scale and noise must be nonnegative (scale positive)".into()));
        }
        match self.input_kind {
            InputKind::Vector { dim } => {
                if dim < 2 {
                    return Err(Error::Config("vector dim must be at least 2".into()));
                }
                if self.source_classes > 2 * dim {
                    return Err(Error::Config(format!(
                        "at most {} classes fit in {dim} dimensions",
                        2 * dim
                    )));
                }
                if !self.shift.mean_offset.is_empty() && self.shift.mean_offset.len() != dim {
                    return Err(Error::Config(format!("mean_offset must have {dim} entries")));
                }
            }
            InputKind::Image { signal_len, window, hop } => {
                if !(signal_len >= window && window >= hop && hop > 0) {
                    return Err(Error::Config("need signal_len >= window >= hop > 0".into()));
                }
                if self.shift.mean_offset.len() > 2 {
                    return Err(Error::Config("image mean_offset has at most 2 entries".into()));
                }
                if self.source_classes > 7 {
                    return Err(Error::Config("image tasks support at most 7 classes".into()));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("task spec serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self.input_kind {
            InputKind::Vector { dim } => vec![dim],
            InputKind::Image { .. } => vec![1, 32, 32],
        }
    }
}

fn class_mean(k: usize, dim: usize, sep: f64) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    if k < dim {
        m[k] = sep;
    } else {
        m[k - dim] = -sep;
    }
    m
}

fn rotate_planes(x: &mut [f64], angle: f64) {
    let (s, c) = angle.sin_cos();
    for pair in x.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
}

/// Covariate shift applied to one vector sample.
pub fn shift_vector(x: &mut [f64], shift: &Shift, rng: &mut impl Rng) {
    rotate_planes(x, shift.rotation_angle);
    for (i, v) in x.iter_mut().enumerate() {
        *v *= shift.scale;
        if let Some(o) = shift.mean_offset.get(i) {
            *v += o;
        }
        if shift.noise_sigma > 0.0 {
            *v += shift.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Tone frequency (cycles per sample) of class `k`.
pub fn tone_frequency(k: usize) -> f64 {
    0.05 + 0.06 * k as f64
}

fn tone_burst(k: usize, len: usize, sigma: f64, shift: Option<&Shift>, rng: &mut impl Rng) -> Vec<f64> {
    let (freq_mul, dc, phase_off, amp, extra_noise) = match shift {
        Some(s) => (
            1.0 + s.mean_offset.first().copied().unwrap_or(0.0),
            s.mean_offset.get(1).copied().unwrap_or(0.0),
            s.rotation_angle,
            s.scale,
            s.noise_sigma,
        ),
        None => (1.0, 0.0, 0.0, 1.0, 0.0),
    };
    let f = tone_frequency(k) * freq_mul;
    let phase = rng.gen_range(0.0..2.0 * PI) + phase_off;
    let center = rng.gen_range(0.25..0.75) * len as f64;
    let width = 0.2 * len as f64;
    let noise = Normal::new(0.0, 0.1 * sigma + extra_noise).unwrap();
    (0..len)
        .map(|t| {
            let tt = t as f64;
            let env = 0.5 + 0.5 * (-((tt - center) / width).powi(2)).exp();
            amp * env * (2.0 * PI * f * tt + phase).sin() + dc + noise.sample(rng)
        })
        .collect()
}

fn generate(
    spec: &PdaTaskSpec,
    classes: &[usize],
    shift: Option<&Shift>,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Vec<usize>)> {
    let mut labels: Vec<usize> = classes
        .iter()
        .flat_map(|&k| std::iter::repeat_n(k, spec.samples_per_class))
        .collect();
    labels.shuffle(rng);
    let n = labels.len();
    match spec.input_kind {
        InputKind::Vector { dim } => {
            let mut data = Vec::with_capacity(n * dim);
            for &k in &labels {
                let mut x = class_mean(k, dim, spec.class_separation);
                for v in x.iter_mut() {
                    *v += spec.class_sigma * rng.sample::<f64, _>(StandardNormal);
                }
                if let Some(s) = shift {
                    shift_vector(&mut x, s, rng);
                }
                data.extend(x);
            }
            Ok((Tensor::new(&[n, dim], data)?, labels))
        }
        InputKind::Image { signal_len, window, hop } => {
            let mut data = Vec::with_capacity(n * signal_len);
            for &k in &labels {
                data.extend(tone_burst(k, signal_len, spec.class_sigma, shift, rng));
            }
            let signals = Tensor::new(&[n, signal_len], data)?;
            Ok((spectrogram_ingest(&signals, window, hop)?, labels))
        }
    }
}

/// Generates the three datasets of a task; identical specs give identical data.
pub fn gen_synthetic_pda(spec: &PdaTaskSpec) -> Result<PdaData> {
    spec.validate()?;
    let hash = spec.hash();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let all: Vec<usize> = (0..spec.source_classes).collect();
    let (xs, ys) = generate(spec, &all, None, &mut rng)?;
    let (xt, yt) = generate(spec, &spec.target_classes, Some(&spec.shift), &mut rng)?;
    let eval_target = Dataset::new(xt, Some(yt), Domain::Target, hash.clone())?;
    Ok(PdaData {
        source: Dataset::new(xs, Some(ys), Domain::Source, hash)?,
        target: eval_target.unlabeled(),
        eval_target,
    })
}

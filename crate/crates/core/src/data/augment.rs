//! Label-preserving perturbations producing contrastive view pairs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spectrogram::resize_bilinear;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    /// Adds `N(0, σ²)` jitter to every value.
    AdditiveGaussian { sigma: f64 },
    /// Multiplies each sample by one factor drawn from `U(low, high)`.
    AmplitudeScale { low: f64, high: f64 },
    /// Crops a random square covering at least `min_fraction` of the side and
    /// resizes it back. Images only.
    RandomCropResize { min_fraction: f64 },
    /// Zeroes each feature (vectors) or frequency row (images) with probability `p`.
    ChannelMask { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub ops: Vec<AugmentOp>,
}

impl AugmentationConfig {
    pub fn vector_default() -> Self {
        AugmentationConfig {
            ops: vec![
                AugmentOp::AmplitudeScale { low: 0.9, high: 1.1 },
                AugmentOp::AdditiveGaussian { sigma: 0.3 },
                AugmentOp::ChannelMask { p: 0.1 },
            ],
        }
    }

    pub fn image_default() -> Self {
        AugmentationConfig {
            ops: vec![
                AugmentOp::RandomCropResize { min_fraction: 0.8 },
                AugmentOp::AmplitudeScale { low: 0.8, high: 1.2 },
                AugmentOp::AdditiveGaussian { sigma: 0.02 },
            ],
        }
    }

    pub fn validate(&self, input_shape: &[usize]) -> Result<()> {
        let image = input_shape.len() == 3;
        for op in &self.ops {
            let ok = match *op {
                AugmentOp::AdditiveGaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
                AugmentOp::AmplitudeScale { low, high } => low > 0.0 && low <= high,
                AugmentOp::RandomCropResize { min_fraction } => {
                    if !image {
                        return Err(Error::InvalidArgument(
                            "random_crop_resize applies to image inputs only".into(),
                        ));
                    }
                    min_fraction > 0.0 && min_fraction <= 1.0
                }
                AugmentOp::ChannelMask { p } => (0.0..1.0).contains(&p),
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("bad augmentation parameters {op:?}")));
            }
        }
        Ok(())
    }
}

fn augment_sample(x: &mut [f64], shape: &[usize], ops: &[AugmentOp], rng: &mut impl Rng) {
    for op in ops {
        match *op {
            AugmentOp::AdditiveGaussian { sigma } => {
                if sigma > 0.0 {
                    let n = Normal::new(0.0, sigma).unwrap();
                    x.iter_mut().for_each(|v| *v += n.sample(rng));
                }
            }
            AugmentOp::AmplitudeScale { low, high } => {
                let s = if high > low { rng.gen_range(low..high) } else { low };
                x.iter_mut().for_each(|v| *v *= s);
            }
            AugmentOp::RandomCropResize { min_fraction } => {
                let (h, w) = (shape[1], shape[2]);
                let side = h.min(w);
                let min_side = ((side as f64 * min_fraction).ceil() as usize).clamp(2, side);
                let crop = rng.gen_range(min_side..=side);
                let r0 = rng.gen_range(0..=h - crop);
                let c0 = rng.gen_range(0..=w - crop);
                // one channel per plane; apply the same window to each
                for plane in x.chunks_mut(h * w) {
                    let window: Vec<f64> = (0..crop)
                        .flat_map(|i| (0..crop).map(move |j| (i, j)))
                        .map(|(i, j)| plane[(r0 + i) * w + c0 + j])
                        .collect();
                    plane.copy_from_slice(&resize_bilinear(&window, crop, crop, h, w));
                }
            }
            AugmentOp::ChannelMask { p } => {
                if p > 0.0 {
                    let row = if shape.len() == 3 { shape[2] } else { 1 };
                    for chunk in x.chunks_mut(row) {
                        if rng.gen::<f64>() < p {
                            chunk.fill(0.0);
                        }
                    }
                }
            }
        }
    }
}

/// Draws one augmented copy of every row.
pub fn augment(x: &Tensor, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<Tensor> {
    cfg.validate(&x.shape()[1..])?;
    let mut out = x.clone();
    let shape = x.shape()[1..].to_vec();
    let w = x.row_len();
    for row in out.data_mut().chunks_mut(w) {
        augment_sample(row, &shape, &cfg.ops, rng);
    }
    Ok(out)
}

/// Two independently augmented views, row-aligned with `x`.
pub fn augment_pair(x: &Tensor, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
    let a = augment(x, cfg, rng)?;
    let b = augment(x, cfg, rng)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn x() -> Tensor {
        Tensor::new(&[3, 4], (0..12).map(|i| i as f64 * 0.5 - 2.0).collect()).unwrap()
    }

    #[test]
    fn empty_pipeline_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = augment_pair(&x(), &AugmentationConfig::default(), &mut rng).unwrap();
        assert!(a.bit_eq(&x()) && b.bit_eq(&x()));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AugmentationConfig {
            ops: vec![AugmentOp::AdditiveGaussian { sigma: 0.0 }],
        };
        let (a, _) = augment_pair(&x(), &cfg, &mut rng).unwrap();
        assert!(a.bit_eq(&x()));
    }

    #[test]
    fn fixed_seed_reproduces_views() {
        let cfg = AugmentationConfig::vector_default();
        let a = augment_pair(&x(), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = augment_pair(&x(), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(a.0.bit_eq(&b.0) && a.1.bit_eq(&b.1));
        assert!(!a.0.bit_eq(&a.1));
    }

    #[test]
    fn crop_rejected_for_vectors() {
        let cfg = AugmentationConfig {
            ops: vec![AugmentOp::RandomCropResize { min_fraction: 0.5 }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(augment_pair(&x(), &cfg, &mut rng).is_err());
        let img = Tensor::full(&[2, 1, 8, 8], 0.5);
        let (a, _) = augment_pair(&img, &cfg, &mut rng).unwrap();
        assert_eq!(a.shape(), img.shape());
        assert!(a.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }
}

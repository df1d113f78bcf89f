use rand::Rng;

use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Zero padding applied before the random crop.
    pub pad_crop: usize,
    pub hflip_prob: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AugmentConfig {
    /// Pad-4 crop, even flip odds, and normalization statistics of `set`.
    pub fn for_dataset<T: Scalar>(set: &LabeledImageSet<T>) -> Self {
        let (mean, std) = set.channel_stats();
        AugmentConfig {
            pad_crop: 4,
            hflip_prob: 0.5,
            mean,
            std,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!("hflip_prob must lie in [0, 1], got {}", self.hflip_prob)));
        }
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Config(format!(
                "normalization has {} means and {} stds for {channels} channels",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }
}

fn normalize_in_place<T: Scalar>(images: &mut Tensor<T>, config: &AugmentConfig) {
    let s = images.shape().to_vec();
    let plane = s[2] * s[3];
    let c = s[1];
    let coef: Vec<(T, T)> = config
        .mean
        .iter()
        .zip(&config.std)
        .map(|(&m, &sd)| (T::lit(m), T::lit(1.0 / sd)))
        .collect();
    for (k, p) in images.data_mut().chunks_mut(plane).enumerate() {
        let (m, inv) = coef[k % c];
        p.iter_mut().for_each(|v| *v = (*v - m) * inv);
    }
}

/// Per-channel `(x - mean) / std`.
pub fn normalize<T: Scalar>(images: &Tensor<T>, config: &AugmentConfig) -> Result<Tensor<T>> {
    let [_, c, _, _] = images.dims4("normalize")?;
    config.validate(c)?;
    let mut out = images.clone();
    normalize_in_place(&mut out, config);
    Ok(out)
}

/// Independently per image: zero-pad by `pad_crop`, crop back to the
/// original size at a uniform offset, mirror horizontally with probability
/// `hflip_prob`, then normalize.
pub fn augment<T: Scalar, R: Rng + ?Sized>(
    images: &Tensor<T>,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = images.dims4("augment")?;
    config.validate(c)?;
    let p = config.pad_crop as i64;
    let per = c * h * w;
    let mut out = vec![T::zero(); n * per];
    for i in 0..n {
        let dy = (rng.random_range(0..=2 * p) - p) as isize;
        let dx = (rng.random_range(0..=2 * p) - p) as isize;
        let flip = config.hflip_prob > 0.0 && rng.random::<f64>() < config.hflip_prob;
        let src = &images.data()[i * per..(i + 1) * per];
        let dst = &mut out[i * per..(i + 1) * per];
        for ch in 0..c {
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let cx = if flip { w - 1 - x } else { x };
                    let sx = cx as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    dst[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    let mut t = Tensor::new([n, c, h, w], out)?;
    normalize_in_place(&mut t, config);
    Ok(t)
}

//! Labeled image sets, the CIFAR-10 binary format, synthetic blobs and
//! training-time augmentation.

mod augment;
mod cifar;
mod synth;

pub use augment::{augment, normalize, AugmentConfig};
pub use cifar::{encode_cifar10, load_cifar10_binary, load_cifar10_dir, parse_cifar10, RECORD_BYTES};
pub use synth::{synth_blobs, synth_blobs_split, BlobStyle};

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet<T> {
    /// `[N, C, H, W]`, values in `[0, 1]`.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub split: Split,
    pub classes: usize,
}

impl<T: Scalar> LabeledImageSet<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, split: Split, classes: usize) -> Result<Self> {
        let [n, ..] = images.dims4("image set")?;
        if n != labels.len() {
            return Err(Error::Data(format!("{n} images but {} labels", labels.len())));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Data(format!("label {l} of sample {i} is not below {classes}")));
        }
        if let Some(v) = images.data().iter().find(|v| !(v.is_finite() && **v >= T::zero() && **v <= T::one())) {
            return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(LabeledImageSet {
            images,
            labels,
            split,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Images at `indices` stacked into `[n, C, H, W]`, with their labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let [c, h, w] = self.image_shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (
            Tensor::new([indices.len(), c, h, w], data).expect("gathered size"),
            labels,
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let (images, labels) = self.gather(indices);
        LabeledImageSet {
            images,
            labels,
            split: self.split,
            classes: self.classes,
        }
    }

    /// Per-channel pixel mean and standard deviation.
    pub fn channel_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let [c, h, w] = self.image_shape();
        let plane = h * w;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for img in self.images.data().chunks(c * plane) {
            for (ch, p) in img.chunks(plane).enumerate() {
                for v in p {
                    let v = v.to_f64_lossy();
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let count = (self.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / count - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        (mean, std)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

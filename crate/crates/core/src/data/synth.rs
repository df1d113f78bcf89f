//! Class-conditional Gaussian blob images.
//!
//! Each class owns a few blobs with fixed centers, widths and colors. A
//! sample jitters the blob positions and amplitudes, adds a randomly colored
//! distractor blob and pixel noise, and clips to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{LabeledImageSet, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobStyle {
    pub blobs_per_class: usize,
    /// Standard deviation of blob center jitter, in pixels.
    pub jitter: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub distractors: usize,
}

impl Default for BlobStyle {
    fn default() -> Self {
        BlobStyle {
            blobs_per_class: 3,
            jitter: 1.5,
            noise: 0.15,
            distractors: 1,
        }
    }
}

#[derive(Debug, Clone)]
struct Blob {
    cy: f64,
    cx: f64,
    width: f64,
    color: Vec<f64>,
}

fn random_blob<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize) -> Blob {
    let margin = |n: usize| (n as f64 * 0.15).max(1.0);
    Blob {
        cy: rng.random_range(margin(h)..(h as f64 - margin(h)).max(margin(h) + 1e-9)),
        cx: rng.random_range(margin(w)..(w as f64 - margin(w)).max(margin(w) + 1e-9)),
        width: rng.random_range(0.08..0.14) * h.min(w) as f64,
        color: (0..c).map(|_| rng.random_range(0.2..1.0)).collect(),
    }
}

struct Generator {
    prototypes: Vec<Vec<Blob>>,
    style: BlobStyle,
    seed: u64,
    shape: [usize; 3],
}

impl Generator {
    fn new(classes: usize, shape: [usize; 3], style: BlobStyle, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument(format!("synthetic blobs need at least 2 classes, got {classes}")));
        }
        let [c, h, w] = shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!("empty image shape {shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prototypes = (0..classes)
            .map(|_| (0..style.blobs_per_class).map(|_| random_blob(&mut rng, c, h, w)).collect())
            .collect();
        Ok(Generator {
            prototypes,
            style,
            seed,
            shape,
        })
    }

    fn sample(&self, per_class: usize, stream: u64, split: Split) -> Result<LabeledImageSet<f64>> {
        let [c, h, w] = self.shape;
        let classes = self.prototypes.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let jitter = Normal::new(0.0, self.style.jitter).expect("finite jitter");
        let noise = Normal::new(0.0, self.style.noise).expect("finite noise");
        let n = per_class * classes;
        let mut data = Vec::with_capacity(n * c * h * w);
        let mut labels = Vec::with_capacity(n);
        let mut img = vec![0.0; c * h * w];
        for i in 0..n {
            let label = i % classes;
            img.iter_mut().for_each(|v| *v = 0.1);
            let mut blobs: Vec<(Blob, f64)> = self.prototypes[label]
                .iter()
                .map(|b| {
                    let mut b = b.clone();
                    b.cy += jitter.sample(&mut rng);
                    b.cx += jitter.sample(&mut rng);
                    (b, rng.random_range(0.7..1.3))
                })
                .collect();
            for _ in 0..self.style.distractors {
                blobs.push((random_blob(&mut rng, c, h, w), rng.random_range(0.5..1.0)));
            }
            for (b, amp) in &blobs {
                let inv = 1.0 / (2.0 * b.width * b.width);
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - b.cy).powi(2) + (x as f64 - b.cx).powi(2);
                        let g = amp * (-d2 * inv).exp();
                        for (ch, col) in b.color.iter().enumerate() {
                            img[(ch * h + y) * w + x] += g * col;
                        }
                    }
                }
            }
            data.extend(img.iter().map(|&v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0)));
            labels.push(label);
        }
        LabeledImageSet::new(Tensor::new([n, c, h, w], data)?, labels, split, classes)
    }
}

fn cast_set<T: Scalar>(set: LabeledImageSet<f64>) -> LabeledImageSet<T> {
    LabeledImageSet {
        images: set.images.cast(),
        labels: set.labels,
        split: set.split,
        classes: set.classes,
    }
}

/// `classes * n_per_class` blob images of shape `[c, h, w]`, classes
/// interleaved, fully determined by `seed`.
pub fn synth_blobs<T: Scalar>(
    classes: usize,
    n_per_class: usize,
    c: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<LabeledImageSet<T>> {
    let g = Generator::new(classes, [c, h, w], BlobStyle::default(), seed)?;
    Ok(cast_set(g.sample(n_per_class, 1, Split::Train)?))
}

/// Train and test sets drawn from the same class prototypes with
/// independent sample streams.
pub fn synth_blobs_split<T: Scalar>(
    classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    shape: [usize; 3],
    style: BlobStyle,
    seed: u64,
) -> Result<(LabeledImageSet<T>, LabeledImageSet<T>)> {
    let g = Generator::new(classes, shape, style, seed)?;
    Ok((
        cast_set(g.sample(train_per_class, 1, Split::Train)?),
        cast_set(g.sample(test_per_class, 2, Split::Test)?),
    ))
}

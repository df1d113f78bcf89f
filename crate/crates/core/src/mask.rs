//! Class-wise channel masks.
//!
//! Each masked conv layer owns a `[D, C_out]` matrix `M`. For a batch with
//! soft labels `Y [N, D]`, sample `i` scales output channel `c` by
//! `sum_d Y[i, d] * M[d, c]`. By linearity this equals summing `D` separate
//! convolutions with weights scaled by `Y[i, d] * M[d, :]`, but costs one
//! convolution and an `[N, D] x [D, C_out]` product.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{Conv2d, LayerScales, ModelGraph, Mode};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ClasswiseMask<T> {
    pub layer_id: usize,
    /// `[D, C_out]`; the gradient buffer accumulates mask gradients.
    pub values: Tensor<T>,
}

impl<T: Scalar> ClasswiseMask<T> {
    pub fn ones(layer_id: usize, classes: usize, channels: usize) -> Self {
        ClasswiseMask {
            layer_id,
            values: Tensor::ones([classes, channels]),
        }
    }

    pub fn new(layer_id: usize, values: Tensor<T>) -> Result<Self> {
        values.dims2("classwise mask")?;
        Ok(ClasswiseMask { layer_id, values })
    }

    pub fn classes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = T> + '_ {
        let cols = self.channels();
        (0..self.classes()).map(move |d| self.values.data()[d * cols + c])
    }

    pub fn column_norm(&self, c: usize) -> T {
        self.column(c).map(|v| v * v).sum::<T>().sqrt()
    }

    /// The mask restricted to the given output channels.
    pub fn restrict(&self, kept: &[usize]) -> Result<Self> {
        Ok(ClasswiseMask {
            layer_id: self.layer_id,
            values: self.values.select(1, kept)?,
        })
    }

    /// CSV with one row per class and one column per channel, in `order`.
    pub fn to_csv(&self, order: &[usize]) -> String {
        let mut s = String::from("class");
        for c in order {
            let _ = write!(s, ",ch{c}");
        }
        s.push('\n');
        let cols = self.channels();
        for d in 0..self.classes() {
            let _ = write!(s, "{d}");
            for &c in order {
                let _ = write!(s, ",{}", self.values.data()[d * cols + c]);
            }
            s.push('\n');
        }
        s
    }
}

/// Masks for every conv layer of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet<T> {
    pub classes: usize,
    pub masks: Vec<ClasswiseMask<T>>,
}

impl<T: Scalar> MaskSet<T> {
    /// All-ones masks on every conv layer of `model`.
    pub fn for_model(model: &ModelGraph<T>, classes: usize) -> Self {
        let masks = model
            .conv_layer_ids()
            .into_iter()
            .map(|id| {
                let c = model.conv(id).expect("conv layer").out_channels();
                ClasswiseMask::ones(id, classes, c)
            })
            .collect();
        MaskSet { classes, masks }
    }

    pub fn get(&self, layer_id: usize) -> Option<&ClasswiseMask<T>> {
        self.masks.iter().find(|m| m.layer_id == layer_id)
    }

    /// Per-layer conv scales for a batch of soft labels.
    pub fn scales(&self, soft: &Tensor<T>, layer_count: usize) -> Result<LayerScales<T>> {
        let mut out: LayerScales<T> = vec![None; layer_count];
        for m in &self.masks {
            let slot = out.get_mut(m.layer_id).ok_or_else(|| {
                Error::InvalidArgument(format!("mask for missing layer {}", m.layer_id))
            })?;
            *slot = Some(aggregate_scale(soft, m)?);
        }
        Ok(out)
    }

    /// Accumulates `Y^T * dScale` into every mask's gradient buffer.
    pub fn accumulate_scale_grads(
        &mut self,
        soft: &Tensor<T>,
        scale_grads: &LayerScales<T>,
    ) -> Result<()> {
        for m in &mut self.masks {
            let g = scale_grads
                .get(m.layer_id)
                .and_then(Option::as_ref)
                .ok_or(Error::MissingActivation("masked conv"))?;
            let grad = mask_grad_from_scale(soft, g, m)?;
            m.values.accumulate_grad(grad.data());
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.masks.iter_mut().map(|m| &mut m.values).collect()
    }

    pub fn zero_grad(&mut self) {
        self.masks.iter_mut().for_each(|m| m.values.zero_grad());
    }

    /// Mean Euclidean norm over all mask columns.
    pub fn mean_column_norm(&self) -> f64 {
        let (sum, count) = self.masks.iter().fold((0.0, 0usize), |(s, n), m| {
            let layer: f64 = (0..m.channels()).map(|c| m.column_norm(c).to_f64_lossy()).sum();
            (s + layer, n + m.channels())
        });
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.masks
            .iter()
            .map(|m| {
                let mut t = m.values.clone();
                t.clear_grad();
                (format!("mask.{}", m.layer_id), t)
            })
            .collect()
    }

    /// Collects every `mask.<layer_id>` tensor.
    pub fn from_named(tensors: &BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let mut masks = Vec::new();
        for (name, t) in tensors {
            if let Some(id) = name.strip_prefix("mask.") {
                let layer_id = id
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad mask name `{name}`")))?;
                masks.push(ClasswiseMask::new(layer_id, t.clone())?);
            }
        }
        masks.sort_by_key(|m| m.layer_id);
        let classes = masks.first().map_or(0, ClasswiseMask::classes);
        if masks.iter().any(|m| m.classes() != classes) {
            return Err(Error::Checkpoint("masks disagree on class count".into()));
        }
        Ok(MaskSet { classes, masks })
    }
}

/// Soft labels: the ground-truth entry stays 1, every other entry is an
/// independent `Normal(mu, sigma)` draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelBatch<T> {
    pub values: Tensor<T>,
    pub mu: f64,
    pub sigma: f64,
    pub rng_seed: u64,
}

pub fn soften_labels<T: Scalar>(
    labels: &Tensor<T>,
    mu: f64,
    sigma: f64,
    rng_seed: u64,
) -> Result<SoftLabelBatch<T>> {
    if !(sigma >= 0.0 && sigma.is_finite() && mu.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "soft labels need finite mu and sigma >= 0, got mu={mu} sigma={sigma}"
        )));
    }
    let classes = ops::one_hot_classes(labels)?;
    let [n, d] = labels.dims2("soften_labels")?;
    let normal = Normal::new(mu, sigma)
        .map_err(|e| Error::InvalidArgument(format!("normal({mu}, {sigma}): {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut values = Vec::with_capacity(n * d);
    for &y in &classes {
        for j in 0..d {
            values.push(if j == y {
                T::one()
            } else {
                T::lit(normal.sample(&mut rng))
            });
        }
    }
    Ok(SoftLabelBatch {
        values: Tensor::new([n, d], values)?,
        mu,
        sigma,
        rng_seed,
    })
}

/// Which mask mechanism a mask phase trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskVariant {
    /// `[D, C]` masks activated by soft labels.
    #[default]
    ClassWise,
    /// `[D, C]` masks activated by the plain one-hot labels.
    Hard,
    /// One `[1, C]` mask row shared by every class.
    Shared,
}

impl MaskVariant {
    /// Rows of each mask for a `classes`-way problem.
    pub fn mask_rows(self, classes: usize) -> usize {
        match self {
            MaskVariant::Shared => 1,
            MaskVariant::ClassWise | MaskVariant::Hard => classes,
        }
    }

    /// Mask activations for a batch of one-hot labels.
    pub fn activations<T: Scalar>(
        self,
        labels: &Tensor<T>,
        mu: f64,
        sigma: f64,
        rng_seed: u64,
    ) -> Result<SoftLabelBatch<T>> {
        match self {
            MaskVariant::ClassWise => soften_labels(labels, mu, sigma, rng_seed),
            MaskVariant::Hard => soften_labels(labels, 0.0, 0.0, rng_seed),
            MaskVariant::Shared => {
                ops::one_hot_classes(labels)?;
                let [n, _] = labels.dims2("shared mask labels")?;
                Ok(SoftLabelBatch {
                    values: Tensor::ones([n, 1]),
                    mu: 1.0,
                    sigma: 0.0,
                    rng_seed,
                })
            }
        }
    }

    /// The label value used for every class when no label is known: the
    /// soft-label mean for class-wise masks, the class average for hard
    /// masks, and 1 for a shared mask.
    pub fn label_free_value(self, mu: f64, classes: usize) -> f64 {
        match self {
            MaskVariant::ClassWise => mu,
            MaskVariant::Hard => 1.0 / classes as f64,
            MaskVariant::Shared => 1.0,
        }
    }
}

impl FromStr for MaskVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classwise" => Ok(MaskVariant::ClassWise),
            "hard" => Ok(MaskVariant::Hard),
            "shared" => Ok(MaskVariant::Shared),
            other => Err(Error::Config(format!("unknown mask variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for MaskVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskVariant::ClassWise => "classwise",
            MaskVariant::Hard => "hard",
            MaskVariant::Shared => "shared",
        })
    }
}

/// Soft-label batch with every entry equal to `value`.
pub fn constant_labels<T: Scalar>(n: usize, rows: usize, value: f64) -> Tensor<T> {
    Tensor::full([n, rows], T::lit(value))
}

/// `scale[i, c] = sum_d soft[i, d] * M[d, c]`.
pub fn aggregate_scale<T: Scalar>(soft: &Tensor<T>, mask: &ClasswiseMask<T>) -> Result<Tensor<T>> {
    let [n, d] = soft.dims2("aggregate_scale")?;
    if d != mask.classes() {
        return Err(Error::shape("aggregate_scale", soft.shape(), mask.values.shape()));
    }
    let c = mask.channels();
    let mut out = vec![T::zero(); n * c];
    T::gemm(n, d, c, soft.data(), false, mask.values.data(), false, &mut out, false);
    Tensor::new([n, c], out)
}

/// `dM = soft^T * dScale`.
pub fn mask_grad_from_scale<T: Scalar>(
    soft: &Tensor<T>,
    grad_scale: &Tensor<T>,
    mask: &ClasswiseMask<T>,
) -> Result<Tensor<T>> {
    let [n, d] = soft.dims2("mask_grad")?;
    let c = mask.channels();
    if grad_scale.shape() != [n, c] || d != mask.classes() {
        return Err(Error::shape("mask_grad", grad_scale.shape(), &[n, c]));
    }
    let mut out = vec![T::zero(); d * c];
    T::gemm(d, n, c, soft.data(), true, grad_scale.data(), false, &mut out, false);
    Tensor::new([d, c], out)
}

#[derive(Debug, Clone)]
pub struct MaskedConvCache<T> {
    input: Tensor<T>,
    unscaled: Tensor<T>,
    scale: Tensor<T>,
}

/// Conv layer `layer_id` evaluated under its class-wise mask: the bias-free
/// convolution is scaled per sample and channel by [`aggregate_scale`], then
/// the (unmasked) bias is added.
pub fn masked_conv_forward<T: Scalar>(
    input: &Tensor<T>,
    conv: &Conv2d<T>,
    layer_id: usize,
    mask: &ClasswiseMask<T>,
    soft: Option<&SoftLabelBatch<T>>,
) -> Result<(Tensor<T>, MaskedConvCache<T>)> {
    if mask.layer_id != layer_id {
        return Err(Error::InvalidArgument(format!(
            "mask belongs to layer {}, not {layer_id}",
            mask.layer_id
        )));
    }
    if mask.channels() != conv.out_channels() {
        return Err(Error::shape("masked_conv", mask.values.shape(), conv.weight.shape()));
    }
    let soft = soft.ok_or_else(|| {
        Error::InvalidArgument("masked conv in training mode needs soft labels".into())
    })?;
    let scale = aggregate_scale(&soft.values, mask)?;
    let (out, unscaled) =
        ops::scaled_conv2d_forward(input, &conv.weight, conv.bias.as_ref(), conv.params, Some(&scale))?;
    Ok((
        out,
        MaskedConvCache {
            input: input.clone(),
            unscaled,
            scale,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct MaskedConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub mask: Tensor<T>,
}

pub fn masked_conv_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &MaskedConvCache<T>,
    conv: &Conv2d<T>,
    mask: &ClasswiseMask<T>,
    soft: &SoftLabelBatch<T>,
) -> Result<MaskedConvGrads<T>> {
    let g = ops::scaled_conv2d_backward(
        grad_out,
        Some(&cache.input),
        &cache.unscaled,
        &conv.weight,
        conv.params,
        Some(&cache.scale),
    )?;
    let gs = g.scale.expect("scale gradient present when a scale was applied");
    Ok(MaskedConvGrads {
        input: g.input,
        weight: g.weight,
        bias: g.bias,
        mask: mask_grad_from_scale(&soft.values, &gs, mask)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormKind {
    /// Sum of Euclidean norms of mask columns.
    #[default]
    L2Group,
    /// Sum of absolute values.
    L1,
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "l2_group" => Ok(NormKind::L2Group),
            "l1" => Ok(NormKind::L1),
            other => Err(Error::Config(format!("unknown norm kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormKind::L2Group => "l2_group",
            NormKind::L1 => "l1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityConfig {
    pub lambda: f64,
    pub norm_kind: NormKind,
}

impl SparsityConfig {
    pub fn new(lambda: f64, norm_kind: NormKind) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(SparsityConfig { lambda, norm_kind })
    }
}

#[derive(Debug, Clone)]
pub struct Penalty<T> {
    /// Unweighted penalty value.
    pub value: f64,
    /// `lambda * d(penalty)/dM`, one tensor per mask.
    pub grads: Vec<Tensor<T>>,
}

/// Group-sparsity penalty over all mask columns. The gradient of a zero
/// column under the l2 norm is taken as zero.
pub fn sparsity_penalty<T: Scalar>(
    masks: &[ClasswiseMask<T>],
    config: &SparsityConfig,
) -> Result<Penalty<T>> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("sparsity penalty over no masks".into()));
    }
    let lambda = T::lit(config.lambda);
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(masks.len());
    for m in masks {
        let mut g = vec![T::zero(); m.values.len()];
        match config.norm_kind {
            NormKind::L2Group => {
                let cols = m.channels();
                for c in 0..cols {
                    let norm = m.column_norm(c);
                    value += norm.to_f64_lossy();
                    if norm > T::zero() {
                        for d in 0..m.classes() {
                            let idx = d * cols + c;
                            g[idx] = lambda * m.values.data()[idx] / norm;
                        }
                    }
                }
            }
            NormKind::L1 => {
                for (gi, &v) in g.iter_mut().zip(m.values.data()) {
                    value += v.abs().to_f64_lossy();
                    *gi = if v > T::zero() {
                        lambda
                    } else if v < T::zero() {
                        -lambda
                    } else {
                        T::zero()
                    };
                }
            }
        }
        grads.push(Tensor::new(m.values.shape().to_vec(), g)?);
    }
    Ok(Penalty { value, grads })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub cross_entropy: f64,
    pub penalty: f64,
}

/// Masked cross-entropy plus `lambda * penalty`. Runs the forward and
/// backward passes, accumulating into weight and mask gradient buffers.
/// Returns the objective and the logits.
pub fn total_objective<T: Scalar>(
    model: &mut ModelGraph<T>,
    masks: &mut MaskSet<T>,
    images: &Tensor<T>,
    labels: &Tensor<T>,
    soft: &SoftLabelBatch<T>,
    config: &SparsityConfig,
) -> Result<(Objective, Tensor<T>)> {
    let scales = masks.scales(&soft.values, model.layers.len())?;
    let logits = model.forward(images, Mode::Train, Some(&scales))?;
    let (ce, grad) = ops::softmax_cross_entropy(&logits, labels)?;
    let scale_grads = model.backward(&grad)?;
    masks.accumulate_scale_grads(&soft.values, &scale_grads)?;
    let penalty = sparsity_penalty(&masks.masks, config)?;
    for (m, g) in masks.masks.iter_mut().zip(&penalty.grads) {
        m.values.accumulate_grad(g.data());
    }
    let ce = ce.to_f64_lossy();
    Ok((
        Objective {
            loss: ce + config.lambda * penalty.value,
            cross_entropy: ce,
            penalty: penalty.value,
        },
        logits,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{conv2d_forward, one_hot, Conv2dParams};
    use rand::SeedableRng;

    #[test]
    fn degenerate_soft_labels() {
        let y = one_hot::<f64>(&[2, 0, 1], 4).unwrap();
        let s = soften_labels(&y, 0.0, 0.0, 1).unwrap();
        assert_eq!(s.values, y);
        let s = soften_labels(&y, 0.5, 0.0, 1).unwrap();
        for (a, b) in s.values.data().iter().zip(y.data()) {
            assert_eq!(*a, if *b == 1.0 { 1.0 } else { 0.5 });
        }
    }

    #[test]
    fn soft_labels_reject_bad_rows_and_sigma() {
        let bad = Tensor::<f32>::new([1, 2], vec![1.0, 1.0]).unwrap();
        assert!(soften_labels(&bad, 0.5, 1.0, 0).is_err());
        let y = one_hot::<f32>(&[0], 2).unwrap();
        assert!(soften_labels(&y, 0.5, -1.0, 0).is_err());
    }

    #[test]
    fn soft_labels_are_deterministic_per_seed() {
        let y = one_hot::<f32>(&[0, 1, 2], 3).unwrap();
        assert_eq!(soften_labels(&y, 0.5, 1.0, 7).unwrap(), soften_labels(&y, 0.5, 1.0, 7).unwrap());
        assert_ne!(soften_labels(&y, 0.5, 1.0, 7).unwrap(), soften_labels(&y, 0.5, 1.0, 8).unwrap());
    }

    #[test]
    fn soft_label_moments() {
        let n = 10_000;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let y = one_hot::<f64>(&labels, 2).unwrap();
        let s = soften_labels(&y, 0.5, 1.0, 42).unwrap();
        let off: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| s.values.data()[i * 2 + (1 - l)])
            .collect();
        let mean = off.iter().sum::<f64>() / n as f64;
        let std = (off.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
        assert!((std - 1.0).abs() < 0.05, "std {std}");
        for (i, &l) in labels.iter().enumerate() {
            assert_eq!(s.values.data()[i * 2 + l], 1.0);
        }
    }

    #[test]
    fn aggregate_scale_selects_row_for_one_hot() {
        let soft = Tensor::<f64>::new([1, 2], vec![1.0, 0.0]).unwrap();
        let m = ClasswiseMask::new(0, Tensor::new([2, 1], vec![2.0, 5.0]).unwrap()).unwrap();
        assert_eq!(aggregate_scale(&soft, &m).unwrap().data(), &[2.0]);
        let one = ClasswiseMask::<f64>::ones(0, 1, 1);
        let s = aggregate_scale(&Tensor::ones([1, 1]), &one).unwrap();
        assert_eq!(s.data(), &[1.0]);
    }

    #[test]
    fn ones_mask_with_hard_labels_is_plain_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::randn([3, 2, 6, 6], 1.0, &mut rng);
        let conv = Conv2d::new(
            Tensor::randn([4, 2, 3, 3], 1.0, &mut rng),
            Some(Tensor::randn([4], 1.0, &mut rng)),
            Conv2dParams::new(1, 1),
        );
        let y = one_hot::<f32>(&[0, 2, 1], 3).unwrap();
        let soft = soften_labels(&y, 0.0, 0.0, 0).unwrap();
        let mask = ClasswiseMask::ones(5, 3, 4);
        let (out, _) = masked_conv_forward(&x, &conv, 5, &mask, Some(&soft)).unwrap();
        let plain = conv2d_forward(&x, &conv.weight, conv.bias.as_ref(), conv.params).unwrap();
        assert!(out.max_abs_diff(&plain).unwrap() <= 1e-6);
        assert!(masked_conv_forward(&x, &conv, 5, &mask, None).is_err());
        assert!(masked_conv_forward(&x, &conv, 6, &mask, Some(&soft)).is_err());
    }

    #[test]
    fn zero_row_annihilates_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::randn([1, 2, 5, 5], 1.0, &mut rng);
        let bias = Tensor::<f32>::new([3], vec![0.5, -1.0, 2.0]).unwrap();
        let conv = Conv2d::new(Tensor::randn([3, 2, 3, 3], 1.0, &mut rng), Some(bias), Conv2dParams::new(1, 0));
        let mut mask = ClasswiseMask::<f32>::ones(0, 2, 3);
        mask.values.data_mut()[3..].iter_mut().for_each(|v| *v = 0.0);
        let soft = soften_labels(&one_hot::<f32>(&[1], 2).unwrap(), 0.0, 0.0, 0).unwrap();
        let (out, _) = masked_conv_forward(&x, &conv, 0, &mask, Some(&soft)).unwrap();
        for (k, chunk) in out.data().chunks(9).enumerate() {
            let b = [0.5, -1.0, 2.0][k];
            assert!(chunk.iter().all(|&v| v == b));
        }
    }

    #[test]
    fn penalty_hand_values() {
        let zero = ClasswiseMask::<f64>::new(0, Tensor::zeros([3, 4])).unwrap();
        let cfg = SparsityConfig::new(0.1, NormKind::L2Group).unwrap();
        let p = sparsity_penalty(std::slice::from_ref(&zero), &cfg).unwrap();
        assert_eq!(p.value, 0.0);
        assert!(p.grads[0].data().iter().all(|v| *v == 0.0 && v.is_finite()));

        let m = ClasswiseMask::<f64>::new(0, Tensor::new([2, 1], vec![3.0, 4.0]).unwrap()).unwrap();
        let p = sparsity_penalty(std::slice::from_ref(&m), &cfg).unwrap();
        assert!((p.value - 5.0).abs() < 1e-12);
        assert!((p.grads[0].data()[0] - 0.1 * 0.6).abs() < 1e-12);

        let l1 = SparsityConfig::new(1.0, NormKind::L1).unwrap();
        assert!((sparsity_penalty(&[m], &l1).unwrap().value - 7.0).abs() < 1e-12);
        assert!(sparsity_penalty::<f64>(&[], &cfg).is_err());
        assert!(SparsityConfig::new(-1.0, NormKind::L1).is_err());
    }
}

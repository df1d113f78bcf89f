//! Epoch loops for dense training, mask training and evaluation.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{augment, normalize, AugmentConfig, LabeledImageSet};
use crate::error::{Error, Result};
use crate::harness::{EpochRecord, Phase};
use crate::mask::{constant_labels, total_objective, MaskSet, MaskVariant, SparsityConfig};
use crate::model::{ModelGraph, Mode};
use crate::ops;
use crate::optim::{OptimizerState, StepSchedule};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Training and test data plus the input pipeline applied to them.
#[derive(Debug, Clone)]
pub struct Datasets<T> {
    pub train: LabeledImageSet<T>,
    pub test: LabeledImageSet<T>,
    pub pipeline: AugmentConfig,
    /// Random crop and flip on training batches; normalization is always on.
    pub augment: bool,
}

impl<T: Scalar> Datasets<T> {
    fn train_batch<R: Rng + ?Sized>(&self, idx: &[usize], rng: &mut R) -> Result<(Tensor<T>, Vec<usize>)> {
        let (x, y) = self.train.gather(idx);
        let x = if self.augment {
            augment(&x, &self.pipeline, rng)?
        } else {
            normalize(&x, &self.pipeline)?
        };
        Ok((x, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSettings {
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

/// Shuffled index batches covering `0..n`; the last batch may be short.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let [_, d] = logits.dims2("argmax")?;
    Ok(logits
        .data()
        .chunks(d)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect())
}

fn correct(pred: &[usize], labels: &[usize]) -> usize {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count()
}

/// Top-1 accuracy of a batch of logits.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty batch".into()));
    }
    Ok(correct(&argmax_rows(logits)?, labels) as f64 / labels.len() as f64)
}

/// Masks to apply during evaluation, with the value given to every class.
#[derive(Debug, Clone, Copy)]
pub struct EvalMasks<'a, T> {
    pub masks: &'a MaskSet<T>,
    pub value: f64,
}

/// Eval-mode predictions for a whole set, in order.
pub fn predict<T: Scalar>(
    model: &mut ModelGraph<T>,
    set: &LabeledImageSet<T>,
    pipeline: &AugmentConfig,
    masks: Option<EvalMasks<'_, T>>,
    batch: usize,
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(set.len());
    let all: Vec<usize> = (0..set.len()).collect();
    for idx in all.chunks(batch.max(1)) {
        let (x, _) = set.gather(idx);
        let x = normalize(&x, pipeline)?;
        let scales = masks
            .map(|m| {
                let soft = constant_labels::<T>(idx.len(), m.masks.classes, m.value);
                m.masks.scales(&soft, model.layers.len())
            })
            .transpose()?;
        let logits = model.forward(&x, Mode::Eval, scales.as_deref())?;
        preds.extend(argmax_rows(&logits)?);
    }
    Ok(preds)
}

/// Top-1 accuracy over a set in eval mode.
pub fn evaluate<T: Scalar>(
    model: &mut ModelGraph<T>,
    set: &LabeledImageSet<T>,
    pipeline: &AugmentConfig,
    masks: Option<EvalMasks<'_, T>>,
    batch: usize,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty set".into()));
    }
    let preds = predict(model, set, pipeline, masks, batch)?;
    Ok(correct(&preds, &set.labels) as f64 / set.len() as f64)
}

fn check_loss(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            step,
            detail: format!("loss is {loss}"),
        })
    }
}

/// Plain cross-entropy training. With `select_best`, the returned model is
/// the epoch with the highest test accuracy (earliest on ties).
#[allow(clippy::too_many_arguments)]
pub fn train_dense<T: Scalar, R: Rng + ?Sized>(
    model: &mut ModelGraph<T>,
    data: &Datasets<T>,
    epochs: usize,
    schedule: &StepSchedule,
    sgd: SgdSettings,
    phase: Phase,
    select_best: bool,
    rng: &mut R,
) -> Result<Vec<EpochRecord>> {
    let mut opt = OptimizerState::new(schedule.initial, sgd.momentum, sgd.weight_decay);
    let mut records = Vec::with_capacity(epochs);
    let mut best: Option<(f64, ModelGraph<T>)> = None;
    for epoch in 0..epochs {
        opt.lr = schedule.lr_at(epoch);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
        for (step, idx) in shuffled_batches(data.train.len(), sgd.batch_size, rng).into_iter().enumerate() {
            let (x, labels) = data.train_batch(&idx, rng)?;
            let y = ops::one_hot(&labels, data.train.classes)?;
            model.zero_grad();
            let logits = model.forward(&x, Mode::Train, None)?;
            let (loss, grad) = ops::softmax_cross_entropy(&logits, &y)?;
            let loss = loss.to_f64_lossy();
            check_loss(loss, epoch, step)?;
            model.backward(&grad)?;
            opt.step(model.params_mut())?;
            loss_sum += loss * idx.len() as f64;
            hits += correct(&argmax_rows(&logits)?, &labels);
            seen += idx.len();
        }
        let test_accuracy = evaluate(model, &data.test, &data.pipeline, None, sgd.batch_size)?;
        records.push(EpochRecord {
            phase,
            epoch,
            lr: opt.lr,
            loss: loss_sum / seen.max(1) as f64,
            train_accuracy: hits as f64 / seen.max(1) as f64,
            test_accuracy,
            penalty: None,
            mask_norm: None,
        });
        if select_best && best.as_ref().is_none_or(|(acc, _)| test_accuracy > *acc) {
            let mut snapshot = model.clone();
            snapshot.clear_caches();
            best = Some((test_accuracy, snapshot));
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    model.clear_caches();
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSettings {
    pub epochs: usize,
    pub lr: f64,
    pub mu: f64,
    pub sigma: f64,
    pub variant: MaskVariant,
    pub sparsity: SparsityConfig,
    /// Keep the masks at their initial values; only weights are trained.
    pub freeze_masks: bool,
}

/// Joint training of weights and masks on cross-entropy plus the weighted
/// sparsity penalty, with fresh mask activations drawn for every batch.
/// Masks get no weight decay.
pub fn train_masks<T: Scalar, R: Rng + ?Sized>(
    model: &mut ModelGraph<T>,
    masks: &mut MaskSet<T>,
    data: &Datasets<T>,
    settings: MaskSettings,
    sgd: SgdSettings,
    rng: &mut R,
) -> Result<Vec<EpochRecord>> {
    let expected = settings.variant.mask_rows(data.train.classes);
    if masks.classes != expected {
        return Err(Error::InvalidArgument(format!(
            "{} masks need {expected} rows, got {}",
            settings.variant, masks.classes
        )));
    }
    let mut weight_opt = OptimizerState::new(settings.lr, sgd.momentum, sgd.weight_decay);
    let mut mask_opt = OptimizerState::new(settings.lr, sgd.momentum, 0.0);
    let value = settings.variant.label_free_value(settings.mu, data.train.classes);
    let mut records = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
        for (step, idx) in shuffled_batches(data.train.len(), sgd.batch_size, rng).into_iter().enumerate() {
            let (x, labels) = data.train_batch(&idx, rng)?;
            let y = ops::one_hot(&labels, data.train.classes)?;
            let soft = settings.variant.activations(&y, settings.mu, settings.sigma, rng.next_u64())?;
            model.zero_grad();
            masks.zero_grad();
            let (obj, logits) = total_objective(model, masks, &x, &y, &soft, &settings.sparsity)?;
            check_loss(obj.loss, epoch, step)?;
            weight_opt.step(model.params_mut())?;
            if !settings.freeze_masks {
                mask_opt.step(masks.params_mut())?;
            }
            loss_sum += obj.loss * idx.len() as f64;
            hits += correct(&argmax_rows(&logits)?, &labels);
            seen += idx.len();
        }
        let penalty = crate::mask::sparsity_penalty(&masks.masks, &settings.sparsity)?.value;
        let test_accuracy = evaluate(
            model,
            &data.test,
            &data.pipeline,
            Some(EvalMasks { masks, value }),
            sgd.batch_size,
        )?;
        records.push(EpochRecord {
            phase: Phase::Mask,
            epoch,
            lr: settings.lr,
            loss: loss_sum / seen.max(1) as f64,
            train_accuracy: hits as f64 / seen.max(1) as f64,
            test_accuracy,
            penalty: Some(penalty),
            mask_norm: Some(masks.mean_column_norm()),
        });
    }
    model.clear_caches();
    Ok(records)
}

use crate::error::{Error, Result};
use crate::mask::{ClasswiseMask, MaskSet};
use crate::model::ModelGraph;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel fold factors `value * sum_d M[d, c]`.
pub fn fold_factors<T: Scalar>(mask: &ClasswiseMask<T>, value: f64) -> Vec<T> {
    let v = T::lit(value);
    (0..mask.channels()).map(|c| v * mask.column(c).sum::<T>()).collect()
}

/// Scales output channel `c` of a conv weight by `value * sum_d M[d, c]`.
///
/// With every soft-label entry equal to `value`, the masked layer computes
/// exactly this scaled convolution followed by its unscaled bias, so the
/// bias is left alone.
pub fn fold_mask<T: Scalar>(weight: &Tensor<T>, mask: &ClasswiseMask<T>, value: f64) -> Result<Tensor<T>> {
    let [c_out, ..] = weight.dims4("fold_mask")?;
    if mask.channels() != c_out {
        return Err(Error::shape("fold_mask", weight.shape(), mask.values.shape()));
    }
    let factors = fold_factors(mask, value);
    let per = weight.len() / c_out;
    let mut out = weight.clone();
    out.clear_grad();
    for (chunk, &f) in out.data_mut().chunks_mut(per).zip(&factors) {
        chunk.iter_mut().for_each(|w| *w *= f);
    }
    Ok(out)
}

/// Folds every mask of `masks` into the matching conv layer of `model`.
pub fn fold_masks<T: Scalar>(model: &mut ModelGraph<T>, masks: &MaskSet<T>, value: f64) -> Result<()> {
    for m in &masks.masks {
        let conv = model
            .conv_mut(m.layer_id)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {} is not a conv layer", m.layer_id)))?;
        conv.weight = fold_mask(&conv.weight, m, value)?;
    }
    Ok(())
}

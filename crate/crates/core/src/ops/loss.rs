use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One-hot encoding of integer class ids as an `[N, classes]` tensor.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros([labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        t.data_mut()[i * classes + l] = T::one();
    }
    Ok(t)
}

/// Index of the single one in each one-hot row.
pub fn one_hot_classes<T: Scalar>(labels: &Tensor<T>) -> Result<Vec<usize>> {
    let [n, d] = labels.dims2("one_hot")?;
    let mut out = Vec::with_capacity(n);
    for (i, row) in labels.data().chunks(d.max(1)).take(n).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != d {
            return Err(Error::InvalidArgument(format!("label row {i} is not one-hot")));
        }
        out.push(row.iter().position(|&v| v == T::one()).unwrap_or(0));
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - label) / N` with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    if logits.shape() != labels.shape() {
        return Err(Error::shape("softmax_cross_entropy", logits.shape(), labels.shape()));
    }
    let [n, d] = logits.dims2("softmax_cross_entropy")?;
    let classes = one_hot_classes(labels)?;
    if n == 0 {
        return Err(Error::InvalidArgument("cross-entropy over an empty batch".into()));
    }
    let inv_n = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); n * d];
    for (i, (row, &y)) in logits.data().chunks(d).zip(&classes).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_denom = denom.ln();
        loss += log_denom - (row[y] - max);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / denom;
            let target = if j == y { T::one() } else { T::zero() };
            grad[i * d + j] = (p - target) * inv_n;
        }
    }
    Ok((loss * inv_n, Tensor::new([n, d], grad)?))
}

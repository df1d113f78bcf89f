use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `output[n, c, :, :] = input[n, c, :, :] * scale[n, c]`.
pub fn channel_scale_forward<T: Scalar>(input: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("channel_scale")?;
    if scale.shape() != [n, c] {
        return Err(Error::shape("channel_scale", input.shape(), scale.shape()));
    }
    let plane = h * w;
    let mut out = input.data().to_vec();
    for (chunk, &s) in out.chunks_mut(plane.max(1)).zip(scale.data()) {
        chunk.iter_mut().for_each(|v| *v *= s);
    }
    if plane == 0 {
        out.clear();
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Returns `(grad_input, grad_scale)`; the scale gradient is the per-channel
/// inner product of the upstream gradient with the input.
pub fn channel_scale_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    scale: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if grad_out.shape() != input.shape() {
        return Err(Error::shape("channel_scale_backward", grad_out.shape(), input.shape()));
    }
    let [n, c, h, w] = input.dims4("channel_scale_backward")?;
    if scale.shape() != [n, c] {
        return Err(Error::shape("channel_scale_backward", input.shape(), scale.shape()));
    }
    let plane = h * w;
    let grad_input = channel_scale_forward(grad_out, scale)?;
    let mut grad_scale = vec![T::zero(); n * c];
    for (k, gs) in grad_scale.iter_mut().enumerate() {
        let g = &grad_out.data()[k * plane..(k + 1) * plane];
        let x = &input.data()[k * plane..(k + 1) * plane];
        *gs = g.iter().zip(x).map(|(a, b)| *a * *b).sum();
    }
    Ok((grad_input, Tensor::new([n, c], grad_scale)?))
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `output` is the forward result; its positive entries mark the active units.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != output.shape() {
        return Err(Error::shape("relu_backward", grad_out.shape(), output.shape()));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolParams {
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || self.kernel == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

/// Max pooling; also returns the flat input index of each selected element.
pub fn maxpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    params: PoolParams,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.dims4("maxpool2d")?;
    let (ho, wo) = match (params.output_extent(h), params.output_extent(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "maxpool {params:?} does not fit input {:?}",
                input.shape()
            )))
        }
    };
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        let plane = &input.data()[base..base + h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..params.kernel {
                    let iy = (oy * params.stride + ky) as isize - params.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..params.kernel {
                        let ix = (ox * params.stride + kx) as isize - params.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(base + best_idx);
            }
        }
    }
    Ok((Tensor::new([n, c, ho, wo], out)?, argmax))
}

pub fn maxpool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape("maxpool2d_backward", grad_out.shape(), &[argmax.len()]));
    }
    let mut grad = Tensor::zeros(input_shape.to_vec());
    let data = grad.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        data[idx] += g;
    }
    Ok(grad)
}

/// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
pub fn global_avgpool_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("global_avgpool")?;
    let plane = h * w;
    if plane == 0 {
        return Err(Error::InvalidArgument("global_avgpool over an empty plane".into()));
    }
    let inv = T::one() / T::lit(plane as f64);
    let data = input
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new([n, c], data)
}

pub fn global_avgpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::shape("global_avgpool_backward", input_shape, &[0, 0, 0, 0]));
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::shape("global_avgpool_backward", grad_out.shape(), &[n, c]));
    }
    let plane = h * w;
    let inv = T::one() / T::lit(plane as f64);
    let mut data = Vec::with_capacity(n * c * plane);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::new(input_shape.to_vec(), data)
}

/// `input [N, D_in] * weight^T [D_in, D_out] + bias`.
pub fn linear_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let [n, d_in] = input.dims2("linear")?;
    let [d_out, w_in] = weight.dims2("linear")?;
    if d_in != w_in {
        return Err(Error::shape("linear", input.shape(), weight.shape()));
    }
    let mut out = vec![T::zero(); n * d_out];
    T::gemm(n, d_in, d_out, input.data(), false, weight.data(), true, &mut out, false);
    if let Some(b) = bias {
        if b.shape() != [d_out] {
            return Err(Error::shape("linear bias", b.shape(), &[d_out]));
        }
        for row in out.chunks_mut(d_out.max(1)) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Tensor::new([n, d_out], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let [n, d_in] = input.dims2("linear_backward")?;
    let [d_out, _] = weight.dims2("linear_backward")?;
    if grad_out.shape() != [n, d_out] {
        return Err(Error::shape("linear_backward", grad_out.shape(), &[n, d_out]));
    }
    let mut gx = vec![T::zero(); n * d_in];
    T::gemm(n, d_out, d_in, grad_out.data(), false, weight.data(), false, &mut gx, false);
    let mut gw = vec![T::zero(); d_out * d_in];
    T::gemm(d_out, n, d_in, grad_out.data(), true, input.data(), false, &mut gw, false);
    let mut gb = vec![T::zero(); d_out];
    for row in grad_out.data().chunks(d_out.max(1)) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::new([n, d_in], gx)?,
        weight: Tensor::new([d_out, d_in], gw)?,
        bias: Tensor::new([d_out], gb)?,
    })
}

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

/// Saved state of a training-mode batchnorm forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel moments of a batch: `(mean, biased variance)`.
fn moments<T: Scalar>(input: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let [n, c, h, w] = input.dims4("batchnorm")?;
    let plane = h * w;
    let count = n * plane;
    if count == 0 {
        return Err(Error::InvalidArgument("batchnorm over an empty batch".into()));
    }
    let inv = T::one() / T::lit(count as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let p = &input.data()[(i * c + ch) * plane..][..plane];
            mean[ch] += p.iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv);
    for i in 0..n {
        for ch in 0..c {
            let p = &input.data()[(i * c + ch) * plane..][..plane];
            let m = mean[ch];
            var[ch] += p.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v *= inv);
    Ok((mean, var))
}

fn affine<T: Scalar>(normalized: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = normalized.dims4("batchnorm")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("batchnorm affine", gamma.shape(), &[c]));
    }
    let plane = h * w;
    let mut out = normalized.data().to_vec();
    for i in 0..n {
        for ch in 0..c {
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            out[(i * c + ch) * plane..][..plane]
                .iter_mut()
                .for_each(|v| *v = *v * g + b);
        }
    }
    Tensor::new(normalized.shape().to_vec(), out)
}

/// Training-mode batchnorm. Returns the output, the backward cache, and the
/// batch mean and unbiased variance for the running-statistics update.
#[allow(clippy::type_complexity)]
pub fn batchnorm2d_forward_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>, Vec<T>, Vec<T>)> {
    let [n, c, h, w] = input.dims4("batchnorm")?;
    let (mean, var) = moments(input)?;
    let eps = T::lit(BATCHNORM_EPS);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let plane = h * w;
    let mut norm = input.data().to_vec();
    for i in 0..n {
        for ch in 0..c {
            let (m, s) = (mean[ch], inv_std[ch]);
            norm[(i * c + ch) * plane..][..plane]
                .iter_mut()
                .for_each(|v| *v = (*v - m) * s);
        }
    }
    let normalized = Tensor::new(input.shape().to_vec(), norm)?;
    let out = affine(&normalized, gamma, beta)?;
    let count = n * plane;
    let unbiased = if count > 1 {
        let corr = T::lit(count as f64 / (count - 1) as f64);
        var.iter().map(|&v| v * corr).collect()
    } else {
        var
    };
    Ok((out, BatchNormCache { normalized, inv_std }, mean, unbiased))
}

pub fn batchnorm2d_forward_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("batchnorm")?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape("batchnorm eval", input.shape(), &[running_mean.len()]));
    }
    let eps = T::lit(BATCHNORM_EPS);
    let plane = h * w;
    let mut norm = input.data().to_vec();
    for i in 0..n {
        for ch in 0..c {
            let m = running_mean[ch];
            let s = T::one() / (running_var[ch] + eps).sqrt();
            norm[(i * c + ch) * plane..][..plane]
                .iter_mut()
                .for_each(|v| *v = (*v - m) * s);
        }
    }
    affine(&Tensor::new(input.shape().to_vec(), norm)?, gamma, beta)
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if grad_out.shape() != cache.normalized.shape() {
        return Err(Error::shape(
            "batchnorm_backward",
            grad_out.shape(),
            cache.normalized.shape(),
        ));
    }
    let [n, c, h, w] = grad_out.dims4("batchnorm_backward")?;
    let plane = h * w;
    let count = T::lit((n * plane) as f64);
    let mut g_gamma = vec![T::zero(); c];
    let mut g_beta = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let g = &grad_out.data()[(i * c + ch) * plane..][..plane];
            let xh = &cache.normalized.data()[(i * c + ch) * plane..][..plane];
            g_beta[ch] += g.iter().copied().sum::<T>();
            g_gamma[ch] += g.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>();
        }
    }
    let mut gx = vec![T::zero(); grad_out.len()];
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * plane;
            let scale = gamma.data()[ch] * cache.inv_std[ch] / count;
            for k in 0..plane {
                let g = grad_out.data()[off + k];
                let xh = cache.normalized.data()[off + k];
                gx[off + k] = scale * (count * g - g_beta[ch] - xh * g_gamma[ch]);
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), gx)?,
        Tensor::new([c], g_gamma)?,
        Tensor::new([c], g_beta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f32>::new([3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn channel_scale_identity_and_annihilator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f32>::randn([2, 3, 4, 4], 1.0, &mut rng);
        let ones = Tensor::ones([2, 3]);
        assert_eq!(channel_scale_forward(&x, &ones).unwrap(), x);
        let zeros = Tensor::zeros([2, 3]);
        let y = channel_scale_forward(&x, &zeros).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_scale_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f32>::randn([3, 2, 3, 5], 1.0, &mut rng);
        let s = Tensor::<f32>::randn([3, 2], 1.0, &mut rng);
        let y = channel_scale_forward(&x, &s).unwrap();
        for n in 0..3 {
            for c in 0..2 {
                for k in 0..15 {
                    let idx = (n * 2 + c) * 15 + k;
                    assert_eq!(y.data()[idx], x.data()[idx] * s.data()[n * 2 + c]);
                }
            }
        }
        assert!(channel_scale_forward(&x, &Tensor::zeros([3, 3])).is_err());
    }

    #[test]
    fn global_avgpool_of_constant() {
        let x = Tensor::<f32>::full([2, 3, 4, 5], 1.75);
        let y = global_avgpool_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1.75).abs() < 1e-6));
    }

    #[test]
    fn maxpool_routes_gradient_to_max() {
        let x = Tensor::<f32>::new([1, 1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let p = PoolParams { kernel: 2, stride: 2, padding: 0 };
        let (y, arg) = maxpool2d_forward(&x, p).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = maxpool2d_backward(&Tensor::<f64>::ones([1, 1, 1, 1]), &arg, x.shape()).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn([8, 3, 5, 5], 3.0, &mut rng).map(|v| v + 2.0);
        let (y, _, _, _) =
            batchnorm2d_forward_train(&x, &Tensor::ones([3]), &Tensor::zeros([3])).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..8)
                .flat_map(|i| y.data()[(i * 3 + ch) * 25..][..25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn linear_shape_mismatch() {
        let x = Tensor::<f32>::zeros([2, 3]);
        let w = Tensor::<f32>::zeros([4, 5]);
        assert!(linear_forward(&x, &w, None).is_err());
    }
}

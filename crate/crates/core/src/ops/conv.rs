//! 2-D cross-correlation lowered to GEMM through im2col.
//!
//! Samples are processed independently (in parallel when a rayon pool with
//! more than one thread is active). Per-sample weight gradients are reduced
//! in sample order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::layers::{channel_scale_backward, channel_scale_forward};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams {
            stride: 1,
            padding: 0,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dParams { stride, padding }
    }

    /// Output extent along one spatial axis, `None` when the kernel does not fit.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    params: Conv2dParams,
) -> Result<(usize, usize, Geometry)> {
    let [n, c_in, h, w] = input.dims4("conv2d")?;
    let [c_out, wc_in, kh, kw] = weight.dims4("conv2d")?;
    if c_in != wc_in || kh != kw {
        return Err(Error::shape("conv2d", input.shape(), weight.shape()));
    }
    if params.stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    let (h_out, w_out) = match (params.output_extent(h, kh), params.output_extent(w, kw)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::shape("conv2d", input.shape(), weight.shape())),
    };
    Ok((
        n,
        c_out,
        Geometry {
            c_in,
            h,
            w,
            k: kh,
            stride: params.stride,
            pad: params.padding,
            h_out,
            w_out,
        },
    ))
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, col: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut col[((ci * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geometry, x: &mut [T]) {
    let p = g.positions();
    x.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..g.c_in {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &col[((ci * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input [N, C_in, H, W]` with `weight [C_out, C_in, K, K]`
/// plus an optional per-channel bias.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    params: Conv2dParams,
) -> Result<Tensor<T>> {
    let (n, c_out, g) = geometry(input, weight, params)?;
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape("conv2d bias", b.shape(), &[c_out]));
        }
    }
    let p = g.positions();
    let in_stride = g.c_in * g.h * g.w;
    let mut out = vec![T::zero(); n * c_out * p];
    if p > 0 && c_out > 0 {
        out.par_chunks_mut(c_out * p)
            .enumerate()
            .for_each_init(
                || vec![T::zero(); g.patch() * p],
                |col, (i, y)| {
                    im2col(&input.data()[i * in_stride..(i + 1) * in_stride], &g, col);
                    T::gemm(c_out, g.patch(), p, weight.data(), false, col, false, y, false);
                    if let Some(b) = bias {
                        for (c, plane) in y.chunks_mut(p).enumerate() {
                            let bc = b.data()[c];
                            plane.iter_mut().for_each(|v| *v += bc);
                        }
                    }
                },
            );
    }
    Tensor::new([n, c_out, g.h_out, g.w_out], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    saved_input: Option<&Tensor<T>>,
    weight: &Tensor<T>,
    params: Conv2dParams,
) -> Result<ConvGrads<T>> {
    let input = saved_input.ok_or(Error::MissingActivation("conv2d_backward"))?;
    let (n, c_out, g) = geometry(input, weight, params)?;
    let expected = [n, c_out, g.h_out, g.w_out];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &expected));
    }
    let p = g.positions();
    let patch = g.patch();
    let in_stride = g.c_in * g.h * g.w;

    let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![T::zero(); patch * p], vec![T::zero(); patch * p]),
            |(col, gcol), i| {
                let x = &input.data()[i * in_stride..(i + 1) * in_stride];
                let gy = &grad_out.data()[i * c_out * p..(i + 1) * c_out * p];
                im2col(x, &g, col);
                let mut gw = vec![T::zero(); c_out * patch];
                // dW = dY (C_out x P) * col^T (P x patch)
                T::gemm(c_out, p, patch, gy, false, col, true, &mut gw, false);
                // dcol = W^T (patch x C_out) * dY (C_out x P)
                T::gemm(patch, c_out, p, weight.data(), true, gy, false, gcol, false);
                let mut gx = vec![T::zero(); in_stride];
                col2im(gcol, &g, &mut gx);
                (gx, gw)
            },
        )
        .collect();

    let mut grad_input = Vec::with_capacity(n * in_stride);
    let mut grad_weight = vec![T::zero(); weight.len()];
    for (gx, gw) in per_sample {
        grad_input.extend_from_slice(&gx);
        for (acc, v) in grad_weight.iter_mut().zip(&gw) {
            *acc += *v;
        }
    }
    let mut grad_bias = vec![T::zero(); c_out];
    for i in 0..n {
        for (c, gb) in grad_bias.iter_mut().enumerate() {
            let start = (i * c_out + c) * p;
            *gb += grad_out.data()[start..start + p].iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), grad_input)?,
        weight: Tensor::new(weight.shape().to_vec(), grad_weight)?,
        bias: Tensor::new([c_out], grad_bias)?,
    })
}

/// Convolution whose bias-free output is multiplied per sample and channel by
/// `scale [N, C_out]` before the bias is added. Returns the output and the
/// unscaled convolution (needed by the backward pass).
pub fn scaled_conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    params: Conv2dParams,
    scale: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let unscaled = conv2d_forward(input, weight, None, params)?;
    let mut out = match scale {
        Some(s) => channel_scale_forward(&unscaled, s)?,
        None => unscaled.clone(),
    };
    if let Some(b) = bias {
        add_channel_bias(&mut out, b)?;
    }
    Ok((out, unscaled))
}

#[derive(Debug, Clone)]
pub struct ScaledConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub scale: Option<Tensor<T>>,
}

pub fn scaled_conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    saved_input: Option<&Tensor<T>>,
    unscaled: &Tensor<T>,
    weight: &Tensor<T>,
    params: Conv2dParams,
    scale: Option<&Tensor<T>>,
) -> Result<ScaledConvGrads<T>> {
    let bias = channel_sums(grad_out)?;
    let (grad_unscaled, grad_scale) = match scale {
        Some(s) => {
            let (g, gs) = channel_scale_backward(grad_out, unscaled, s)?;
            (g, Some(gs))
        }
        None => (grad_out.clone(), None),
    };
    let grads = conv2d_backward(&grad_unscaled, saved_input, weight, params)?;
    Ok(ScaledConvGrads {
        input: grads.input,
        weight: grads.weight,
        bias,
        scale: grad_scale,
    })
}

pub(crate) fn add_channel_bias<T: Scalar>(t: &mut Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let [_, c, h, w] = t.dims4("add_bias")?;
    if bias.shape() != [c] {
        return Err(Error::shape("add_bias", bias.shape(), &[c]));
    }
    let plane = h * w;
    if plane == 0 {
        return Ok(());
    }
    for (k, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        let b = bias.data()[k % c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Ok(())
}

fn channel_sums<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, c, h, w] = t.dims4("channel_sums")?;
    let plane = h * w;
    let mut sums = vec![T::zero(); c];
    if plane > 0 {
        for (k, chunk) in t.data().chunks(plane).enumerate() {
            sums[k % c] += chunk.iter().copied().sum::<T>();
        }
    }
    Tensor::new([c], sums)
}

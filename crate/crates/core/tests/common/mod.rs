#![allow(dead_code)]

use rand::Rng;
use whitebox::ops::Conv2dParams;
use whitebox::Tensor;

/// Direct nested-loop cross-correlation with zero padding.
pub fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let s = x.shape();
    let (n, ci, h, wd) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    let (co, k) = (ws[0], ws[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * ho * wo];
    for i in 0..n {
        for o in 0..co {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((i * ci + c) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((o * ci + c) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((i * co + o) * ho + y) * wo + xo] = acc;
                }
            }
        }
    }
    Tensor::new([n, co, ho, wo], out).unwrap()
}

pub fn params(stride: usize, pad: usize) -> Conv2dParams {
    Conv2dParams::new(stride, pad)
}

pub fn randn<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, rng)
}

pub const FD_STEP: f64 = 1e-4;
/// Entries smaller than this are compared against it instead of their own
/// magnitude.
pub const REL_FLOOR: f64 = 1e-3;

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest entrywise relative error between analytic and numeric gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// `sum(r * y)`, the scalar used to probe vector-valued ops.
pub fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn max_abs(t: &[f64]) -> f64 {
    t.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Prints and checks one acceptance line.
pub fn verdict(name: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

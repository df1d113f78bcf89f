//! SGD with momentum and coupled L2 weight decay.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerState {
            lr,
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    pub fn buffers(&self) -> &[Vec<T>] {
        &self.buffers
    }

    /// One update over `params`, which must be passed in the same order every
    /// call:
    ///
    /// ```text
    /// v <- momentum * v + grad + weight_decay * param
    /// param <- param - lr * v
    /// ```
    ///
    /// Parameters without a gradient buffer are treated as having zero gradient.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>) -> Result<()> {
        if self.buffers.is_empty() {
            self.buffers = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        if self.buffers.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, got {}",
                self.buffers.len(),
                params.len()
            )));
        }
        let lr = T::lit(self.lr);
        let mu = T::lit(self.momentum);
        let wd = T::lit(self.weight_decay);
        for (param, buf) in params.into_iter().zip(self.buffers.iter_mut()) {
            if buf.len() != param.len() {
                return Err(Error::shape("sgd_step", param.shape(), &[buf.len()]));
            }
            let (data, grad) = param.data_and_grad_mut();
            for (i, (p, v)) in data.iter_mut().zip(buf.iter_mut()).enumerate() {
                let g = grad.map_or(T::zero(), |g| g[i]);
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            }
        }
        Ok(())
    }
}

/// Piecewise-constant schedule: `initial * factor^k` where `k` counts the
/// milestones at or below the (zero-based) epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    pub initial: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl StepSchedule {
    pub fn constant(lr: f64) -> Self {
        StepSchedule {
            initial: lr,
            milestones: Vec::new(),
            factor: 1.0,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.initial * self.factor.powi(k as i32)
    }
}

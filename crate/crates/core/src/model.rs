//! Sequential CNN: ordered layers with explicit forward/backward passes.
//!
//! A training-mode forward pass caches what each layer needs; [`ModelGraph::backward`]
//! consumes the caches, accumulates parameter gradients in place, and returns
//! the gradient of every per-sample conv scale that was supplied.

use std::collections::BTreeMap;

use rand::Rng;

use crate::arch::{Architecture, ConvDesc, FeatureShape, LayerDesc};
use crate::error::{Error, Result};
use crate::ops::{self, BatchNormCache, Conv2dParams, PoolParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer `[N, C_out]` conv output scales, indexed by layer position.
pub type LayerScales<T> = Vec<Option<Tensor<T>>>;

#[derive(Debug, Clone)]
struct ConvCache<T> {
    input: Tensor<T>,
    unscaled: Tensor<T>,
    scale: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub params: Conv2dParams,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>, params: Conv2dParams) -> Self {
        Conv2d {
            weight,
            bias,
            params,
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    /// `None` until the first training-mode batch.
    pub running: Option<RunningStats<T>>,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::ones([channels]),
            beta: Tensor::zeros([channels]),
            running: None,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn update_running(&mut self, mean: &[T], var: &[T]) {
        let m = T::lit(ops::BATCHNORM_MOMENTUM);
        match self.running.as_mut() {
            None => {
                // Start from the conventional (0, 1) and take one momentum step.
                let one = T::one();
                self.running = Some(RunningStats {
                    mean: mean.iter().map(|&b| m * b).collect(),
                    var: var.iter().map(|&b| (one - m) + m * b).collect(),
                });
            }
            Some(r) => {
                for (rm, &b) in r.mean.iter_mut().zip(mean) {
                    *rm = (T::one() - m) * *rm + m * b;
                }
                for (rv, &b) in r.var.iter_mut().zip(var) {
                    *rv = (T::one() - m) * *rv + m * b;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Self {
        Linear {
            weight,
            bias,
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu { output: Option<Tensor<T>> },
    MaxPool { params: PoolParams, argmax: Option<(Vec<usize>, Vec<usize>)> },
    GlobalAvgPool { input_shape: Option<Vec<usize>> },
    Flatten { input_shape: Option<Vec<usize>> },
    Linear(Linear<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu { .. } => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::GlobalAvgPool { .. } => "globalavgpool",
            Layer::Flatten { .. } => "flatten",
            Layer::Linear(_) => "linear",
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Conv(c) => c.cache = None,
            Layer::BatchNorm(b) => b.cache = None,
            Layer::Relu { output } => *output = None,
            Layer::MaxPool { argmax, .. } => *argmax = None,
            Layer::GlobalAvgPool { input_shape } | Layer::Flatten { input_shape } => {
                *input_shape = None
            }
            Layer::Linear(l) => l.cache = None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelGraph<T> {
    /// `(channels, height, width)` of one input image.
    pub input: [usize; 3],
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> ModelGraph<T> {
    /// Builds a freshly initialized graph: He-normal conv weights, zero conv
    /// biases, PyTorch-style uniform linear layers, identity batchnorm.
    pub fn from_architecture<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        if !arch.is_sequential() {
            return Err(Error::InvalidArgument(
                "residual blocks cannot be built into a sequential graph".into(),
            ));
        }
        let shapes = arch.shapes()?;
        let [c0, h0, w0] = arch.input;
        let mut prev = FeatureShape::Spatial { c: c0, h: h0, w: w0 };
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (desc, &shape) in arch.layers.iter().zip(&shapes) {
            let layer = match *desc {
                LayerDesc::Conv(ConvDesc {
                    out,
                    kernel,
                    stride,
                    padding,
                    bias,
                }) => {
                    let c_in = match prev {
                        FeatureShape::Spatial { c, .. } => c,
                        FeatureShape::Flat { .. } => unreachable!("validated by shapes()"),
                    };
                    let fan_in = (c_in * kernel * kernel) as f64;
                    let weight = Tensor::randn([out, c_in, kernel, kernel], (2.0 / fan_in).sqrt(), rng);
                    let bias = bias.then(|| Tensor::zeros([out]));
                    Layer::Conv(Conv2d::new(weight, bias, Conv2dParams::new(stride, padding)))
                }
                LayerDesc::BatchNorm => match prev {
                    FeatureShape::Spatial { c, .. } => Layer::BatchNorm(BatchNorm2d::new(c)),
                    FeatureShape::Flat { .. } => unreachable!("validated by shapes()"),
                },
                LayerDesc::Relu => Layer::Relu { output: None },
                LayerDesc::MaxPool(params) => Layer::MaxPool { params, argmax: None },
                LayerDesc::GlobalAvgPool => Layer::GlobalAvgPool { input_shape: None },
                LayerDesc::Flatten => Layer::Flatten { input_shape: None },
                LayerDesc::Linear { out, bias } => {
                    let d_in = prev.size();
                    let bound = 1.0 / (d_in as f64).sqrt();
                    let weight = Tensor::uniform([out, d_in], -bound, bound, rng);
                    let bias = bias.then(|| Tensor::uniform([out], -bound, bound, rng));
                    Layer::Linear(Linear::new(weight, bias))
                }
                LayerDesc::ResidualBegin | LayerDesc::Shortcut(_) | LayerDesc::ResidualEnd => {
                    unreachable!("rejected above")
                }
            };
            layers.push(layer);
            prev = shape;
        }
        let graph = ModelGraph {
            input: arch.input,
            layers,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Architecture description matching the current parameter shapes.
    pub fn architecture(&self) -> Result<Architecture> {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv(c) => LayerDesc::Conv(ConvDesc {
                    out: c.out_channels(),
                    kernel: c.kernel(),
                    stride: c.params.stride,
                    padding: c.params.padding,
                    bias: c.bias.is_some(),
                }),
                Layer::BatchNorm(_) => LayerDesc::BatchNorm,
                Layer::Relu { .. } => LayerDesc::Relu,
                Layer::MaxPool { params, .. } => LayerDesc::MaxPool(*params),
                Layer::GlobalAvgPool { .. } => LayerDesc::GlobalAvgPool,
                Layer::Flatten { .. } => LayerDesc::Flatten,
                Layer::Linear(l) => LayerDesc::Linear {
                    out: l.out_features(),
                    bias: l.bias.is_some(),
                },
            })
            .collect();
        Architecture::new(self.input, layers)
    }

    /// Checks that adjacent layers agree on channel counts and feature sizes
    /// and that the graph ends in a single linear classification head.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("model has no layers".into()));
        }
        let [c0, h0, w0] = self.input;
        let mut cur = FeatureShape::Spatial { c: c0, h: h0, w: w0 };
        let mismatch = |idx: usize, msg: String| {
            Err(Error::InvalidArgument(format!("layer {idx}: {msg}")))
        };
        for (idx, layer) in self.layers.iter().enumerate() {
            cur = match (layer, cur) {
                (Layer::Conv(conv), FeatureShape::Spatial { c, h, w }) => {
                    if conv.in_channels() != c {
                        return mismatch(idx, format!("conv expects {} input channels, got {c}", conv.in_channels()));
                    }
                    if let Some(b) = &conv.bias {
                        if b.len() != conv.out_channels() {
                            return mismatch(idx, "conv bias length differs from C_out".into());
                        }
                    }
                    let k = conv.kernel();
                    if conv.weight.shape()[3] != k {
                        return mismatch(idx, "conv kernel must be square".into());
                    }
                    match (conv.params.output_extent(h, k), conv.params.output_extent(w, k)) {
                        (Some(ho), Some(wo)) => FeatureShape::Spatial { c: conv.out_channels(), h: ho, w: wo },
                        _ => return mismatch(idx, "kernel does not fit".into()),
                    }
                }
                (Layer::BatchNorm(bn), FeatureShape::Spatial { c, .. }) => {
                    if bn.channels() != c || bn.beta.len() != c {
                        return mismatch(idx, format!("batchnorm has {} channels, input has {c}", bn.channels()));
                    }
                    if let Some(r) = &bn.running {
                        if r.mean.len() != c || r.var.len() != c {
                            return mismatch(idx, "running statistics length differs".into());
                        }
                    }
                    cur
                }
                (Layer::Relu { .. }, s) => s,
                (Layer::MaxPool { params, .. }, FeatureShape::Spatial { c, h, w }) => {
                    match (params.output_extent(h), params.output_extent(w)) {
                        (Some(ho), Some(wo)) => FeatureShape::Spatial { c, h: ho, w: wo },
                        _ => return mismatch(idx, "pool does not fit".into()),
                    }
                }
                (Layer::GlobalAvgPool { .. }, FeatureShape::Spatial { c, .. }) => FeatureShape::Flat { d: c },
                (Layer::Flatten { .. }, s) => FeatureShape::Flat { d: s.size() },
                (Layer::Linear(l), FeatureShape::Flat { d }) => {
                    if l.in_features() != d {
                        return mismatch(idx, format!("linear expects {} inputs, got {d}", l.in_features()));
                    }
                    FeatureShape::Flat { d: l.out_features() }
                }
                (layer, s) => return mismatch(idx, format!("{} cannot take input {s:?}", layer.kind())),
            };
        }
        match self.layers.last() {
            Some(Layer::Linear(_)) => Ok(()),
            _ => Err(Error::InvalidArgument(
                "model must end in a linear classification head".into(),
            )),
        }
    }

    /// Output width of the classification head.
    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Linear(l)) => l.out_features(),
            _ => 0,
        }
    }

    /// Positions of all conv layers, in order.
    pub fn conv_layer_ids(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, Layer::Conv(_)).then_some(i))
            .collect()
    }

    pub fn conv(&self, layer_id: usize) -> Option<&Conv2d<T>> {
        match self.layers.get(layer_id) {
            Some(Layer::Conv(c)) => Some(c),
            _ => None,
        }
    }

    pub fn conv_mut(&mut self, layer_id: usize) -> Option<&mut Conv2d<T>> {
        match self.layers.get_mut(layer_id) {
            Some(Layer::Conv(c)) => Some(c),
            _ => None,
        }
    }

    /// Forward pass. In [`Mode::Train`] batchnorm uses batch statistics and
    /// every layer caches its inputs for [`backward`](Self::backward).
    /// `scales`, when given, must have one entry per layer; conv layers with
    /// an entry multiply their bias-free output by it.
    pub fn forward(
        &mut self,
        input: &Tensor<T>,
        mode: Mode,
        scales: Option<&[Option<Tensor<T>>]>,
    ) -> Result<Tensor<T>> {
        if let Some(s) = scales {
            if s.len() != self.layers.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} scale slots for {} layers",
                    s.len(),
                    self.layers.len()
                )));
            }
        }
        let [c, h, w] = self.input;
        let [_, ic, ih, iw] = input.dims4("model input")?;
        if [ic, ih, iw] != [c, h, w] {
            return Err(Error::shape("model input", input.shape(), &[0, c, h, w]));
        }
        let train = mode == Mode::Train;
        let mut x = input.clone();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            let scale = scales.and_then(|s| s[idx].as_ref());
            x = match layer {
                Layer::Conv(conv) => {
                    let (out, unscaled) = ops::scaled_conv2d_forward(
                        &x,
                        &conv.weight,
                        conv.bias.as_ref(),
                        conv.params,
                        scale,
                    )?;
                    conv.cache = train.then(|| ConvCache {
                        input: x,
                        unscaled,
                        scale: scale.cloned(),
                    });
                    out
                }
                Layer::BatchNorm(bn) => {
                    if train {
                        let (out, cache, mean, var) =
                            ops::batchnorm2d_forward_train(&x, &bn.gamma, &bn.beta)?;
                        bn.update_running(&mean, &var);
                        bn.cache = Some(cache);
                        out
                    } else {
                        let r = bn.running.as_ref().ok_or(Error::NoRunningStats(idx))?;
                        ops::batchnorm2d_forward_eval(&x, &bn.gamma, &bn.beta, &r.mean, &r.var)?
                    }
                }
                Layer::Relu { output } => {
                    let out = ops::relu_forward(&x);
                    *output = train.then(|| out.clone());
                    out
                }
                Layer::MaxPool { params, argmax } => {
                    let (out, idx_map) = ops::maxpool2d_forward(&x, *params)?;
                    *argmax = train.then(|| (idx_map, x.shape().to_vec()));
                    out
                }
                Layer::GlobalAvgPool { input_shape } => {
                    let out = ops::global_avgpool_forward(&x)?;
                    *input_shape = train.then(|| x.shape().to_vec());
                    out
                }
                Layer::Flatten { input_shape } => {
                    let shape = x.shape().to_vec();
                    let n = shape[0];
                    let d = shape[1..].iter().product::<usize>();
                    *input_shape = train.then_some(shape);
                    x.reshape([n, d])?
                }
                Layer::Linear(lin) => {
                    let out = ops::linear_forward(&x, &lin.weight, lin.bias.as_ref())?;
                    lin.cache = train.then_some(x);
                    out
                }
            };
        }
        Ok(x)
    }

    /// Backpropagates `grad_output` through the cached training-mode forward
    /// pass. Parameter gradients are accumulated into their tensors; the
    /// returned vector holds the gradient of each supplied conv scale.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<LayerScales<T>> {
        let mut scale_grads: LayerScales<T> = vec![None; self.layers.len()];
        let mut g = grad_output.clone();
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            g = match layer {
                Layer::Conv(conv) => {
                    let cache = conv.cache.take().ok_or(Error::MissingActivation("conv"))?;
                    let grads = ops::scaled_conv2d_backward(
                        &g,
                        Some(&cache.input),
                        &cache.unscaled,
                        &conv.weight,
                        conv.params,
                        cache.scale.as_ref(),
                    )?;
                    conv.weight.accumulate_grad(grads.weight.data());
                    if let Some(b) = conv.bias.as_mut() {
                        b.accumulate_grad(grads.bias.data());
                    }
                    scale_grads[idx] = grads.scale;
                    grads.input
                }
                Layer::BatchNorm(bn) => {
                    let cache = bn.cache.take().ok_or(Error::MissingActivation("batchnorm"))?;
                    let (gx, gg, gb) = ops::batchnorm2d_backward(&g, &cache, &bn.gamma)?;
                    bn.gamma.accumulate_grad(gg.data());
                    bn.beta.accumulate_grad(gb.data());
                    gx
                }
                Layer::Relu { output } => {
                    let out = output.take().ok_or(Error::MissingActivation("relu"))?;
                    ops::relu_backward(&g, &out)?
                }
                Layer::MaxPool { argmax, .. } => {
                    let (idx_map, shape) = argmax.take().ok_or(Error::MissingActivation("maxpool"))?;
                    ops::maxpool2d_backward(&g, &idx_map, &shape)?
                }
                Layer::GlobalAvgPool { input_shape } => {
                    let shape = input_shape.take().ok_or(Error::MissingActivation("globalavgpool"))?;
                    ops::global_avgpool_backward(&g, &shape)?
                }
                Layer::Flatten { input_shape } => {
                    let shape = input_shape.take().ok_or(Error::MissingActivation("flatten"))?;
                    g.reshape(shape)?
                }
                Layer::Linear(lin) => {
                    let input = lin.cache.take().ok_or(Error::MissingActivation("linear"))?;
                    let grads = ops::linear_backward(&g, &input, &lin.weight)?;
                    lin.weight.accumulate_grad(grads.weight.data());
                    if let Some(b) = lin.bias.as_mut() {
                        b.accumulate_grad(grads.bias.data());
                    }
                    grads.input
                }
            };
        }
        Ok(scale_grads)
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    if let Some(b) = c.bias.as_mut() {
                        out.push(b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                Layer::Linear(l) => {
                    out.push(&mut l.weight);
                    if let Some(b) = l.bias.as_mut() {
                        out.push(b);
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|t| t.len()).sum()
    }

    /// Parameters and batchnorm running statistics under stable names.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    out.push((format!("layer{i}.weight"), c.weight.clone()));
                    if let Some(b) = &c.bias {
                        out.push((format!("layer{i}.bias"), b.clone()));
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("layer{i}.gamma"), bn.gamma.clone()));
                    out.push((format!("layer{i}.beta"), bn.beta.clone()));
                    if let Some(r) = &bn.running {
                        let c = r.mean.len();
                        out.push((format!("layer{i}.running_mean"), Tensor::new([c], r.mean.clone()).expect("length c")));
                        out.push((format!("layer{i}.running_var"), Tensor::new([c], r.var.clone()).expect("length c")));
                    }
                }
                Layer::Linear(l) => {
                    out.push((format!("layer{i}.weight"), l.weight.clone()));
                    if let Some(b) = &l.bias {
                        out.push((format!("layer{i}.bias"), b.clone()));
                    }
                }
                _ => {}
            }
        }
        for (_, t) in out.iter_mut() {
            t.clear_grad();
        }
        out
    }

    /// Overwrites parameters from `tensors` (as produced by
    /// [`named_tensors`](Self::named_tensors)). Every parameter must be present
    /// with a matching shape; running statistics are optional.
    pub fn load_named(&mut self, tensors: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        let take = |name: String, want: &[usize]| -> Result<Tensor<T>> {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != want {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    c.weight = take(format!("layer{i}.weight"), &c.weight.shape().to_vec())?;
                    if let Some(b) = c.bias.as_mut() {
                        *b = take(format!("layer{i}.bias"), &b.shape().to_vec())?;
                    }
                }
                Layer::BatchNorm(bn) => {
                    let c = bn.channels();
                    bn.gamma = take(format!("layer{i}.gamma"), &[c])?;
                    bn.beta = take(format!("layer{i}.beta"), &[c])?;
                    let mean_name = format!("layer{i}.running_mean");
                    bn.running = if tensors.contains_key(&mean_name) {
                        Some(RunningStats {
                            mean: take(mean_name, &[c])?.into_data(),
                            var: take(format!("layer{i}.running_var"), &[c])?.into_data(),
                        })
                    } else {
                        None
                    };
                }
                Layer::Linear(l) => {
                    l.weight = take(format!("layer{i}.weight"), &l.weight.shape().to_vec())?;
                    if let Some(b) = l.bias.as_mut() {
                        *b = take(format!("layer{i}.bias"), &b.shape().to_vec())?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv(c) => Layer::Conv(Conv2d::new(
                    c.weight.cast(),
                    c.bias.as_ref().map(Tensor::cast),
                    c.params,
                )),
                Layer::BatchNorm(bn) => Layer::BatchNorm(BatchNorm2d {
                    gamma: bn.gamma.cast(),
                    beta: bn.beta.cast(),
                    running: bn.running.as_ref().map(|r| RunningStats {
                        mean: r.mean.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
                        var: r.var.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
                    }),
                    cache: None,
                }),
                Layer::Relu { .. } => Layer::Relu { output: None },
                Layer::MaxPool { params, .. } => Layer::MaxPool {
                    params: *params,
                    argmax: None,
                },
                Layer::GlobalAvgPool { .. } => Layer::GlobalAvgPool { input_shape: None },
                Layer::Flatten { .. } => Layer::Flatten { input_shape: None },
                Layer::Linear(l) => {
                    Layer::Linear(Linear::new(l.weight.cast(), l.bias.as_ref().map(Tensor::cast)))
                }
            })
            .collect();
        ModelGraph {
            input: self.input,
            layers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> ModelGraph<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ModelGraph::from_architecture(&Architecture::toy4(), &mut rng).unwrap()
    }

    #[test]
    fn toy_builds_and_validates() {
        let g = toy();
        assert_eq!(g.classes(), 10);
        assert_eq!(g.conv_layer_ids(), vec![0, 4, 8, 12]);
        assert_eq!(g.architecture().unwrap().layers, Architecture::toy4().layers);
    }

    #[test]
    fn eval_before_statistics_is_an_error() {
        let mut g = toy();
        let x = Tensor::zeros([1, 3, 32, 32]);
        assert!(matches!(g.forward(&x, Mode::Eval, None), Err(Error::NoRunningStats(1))));
        g.forward(&x, Mode::Train, None).unwrap();
        assert!(g.forward(&x, Mode::Eval, None).is_ok());
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut g = toy();
        let grad = Tensor::zeros([1, 10]);
        assert!(matches!(g.backward(&grad), Err(Error::MissingActivation(_))));
    }

    #[test]
    fn forward_backward_is_finite() {
        let mut g = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn([4, 3, 32, 32], 1.0, &mut rng);
        let y = g.forward(&x, Mode::Train, None).unwrap();
        assert_eq!(y.shape(), &[4, 10]);
        let labels = ops::one_hot::<f32>(&[0, 1, 2, 3], 10).unwrap();
        let (loss, grad) = ops::softmax_cross_entropy(&y, &labels).unwrap();
        assert!(loss.is_finite());
        g.backward(&grad).unwrap();
        for p in g.params_mut() {
            assert!(p.grad().unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn validate_catches_channel_mismatch() {
        let mut g = toy();
        if let Layer::Conv(c) = &mut g.layers[4] {
            c.weight = Tensor::zeros([32, 15, 3, 3]);
        }
        assert!(g.validate().is_err());
    }

    #[test]
    fn named_tensors_round_trip() {
        let mut g = toy();
        let x = Tensor::ones([2, 3, 32, 32]);
        g.forward(&x, Mode::Train, None).unwrap();
        let named: BTreeMap<_, _> = g.named_tensors().into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut fresh = ModelGraph::from_architecture(&Architecture::toy4(), &mut rng).unwrap();
        fresh.load_named(&named).unwrap();
        let a = g.forward(&x, Mode::Eval, None).unwrap();
        let b = fresh.forward(&x, Mode::Eval, None).unwrap();
        assert_eq!(a, b);
    }
}

//! Structural removal of conv output channels.

use crate::arch::FeatureShape;
use crate::error::{Error, Result};
use crate::model::{BatchNorm2d, Conv2d, Layer, Linear, ModelGraph, RunningStats};
use crate::prune::plan::PruningPlan;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Returns a new graph in which every conv layer listed in `plan` keeps only
/// its planned output channels. Consumers follow: the next conv drops the
/// matching input channels, batchnorm slices its parameters and running
/// statistics, and the first linear layer drops the features derived from
/// removed channels (one per channel after global pooling, `H * W` per
/// channel after a plain flatten).
pub fn apply_plan<T: Scalar>(graph: &ModelGraph<T>, plan: &PruningPlan) -> Result<ModelGraph<T>> {
    plan.validate()?;
    for l in &plan.layers {
        match graph.conv(l.layer_id) {
            Some(c) if c.out_channels() == l.original => {}
            Some(c) => {
                return Err(Error::InvalidArgument(format!(
                    "plan expects {} channels in layer {}, graph has {}",
                    l.original,
                    l.layer_id,
                    c.out_channels()
                )))
            }
            None => {
                return Err(Error::InvalidArgument(format!(
                    "plan references layer {}, which is not a conv layer",
                    l.layer_id
                )))
            }
        }
    }
    let shapes = graph.architecture()?.shapes()?;
    let [c0, h0, w0] = graph.input;
    let mut prev = FeatureShape::Spatial { c: c0, h: h0, w: w0 };
    // Kept channels of the most recent producer, while they still index the
    // current activation.
    let mut live: Option<Vec<usize>> = None;
    // Features per channel after flattening.
    let mut per_channel = 1usize;
    let mut layers = Vec::with_capacity(graph.layers.len());
    for (idx, (layer, &shape)) in graph.layers.iter().zip(&shapes).enumerate() {
        let new = match layer {
            Layer::Conv(c) => {
                let mut weight = c.weight.clone();
                weight.clear_grad();
                if let Some(inputs) = &live {
                    weight = weight.select(1, inputs)?;
                }
                let mut bias = c.bias.clone();
                live = None;
                if let Some(lp) = plan.layer(idx) {
                    weight = weight.select(0, &lp.kept)?;
                    bias = bias.map(|b| b.select(0, &lp.kept)).transpose()?;
                    live = Some(lp.kept.clone());
                }
                if let Some(b) = bias.as_mut() {
                    b.clear_grad();
                }
                Layer::Conv(Conv2d::new(weight, bias, c.params))
            }
            Layer::BatchNorm(bn) => {
                let mut out = BatchNorm2d::new(bn.channels());
                out.gamma = bn.gamma.clone();
                out.beta = bn.beta.clone();
                out.running = bn.running.clone();
                if let Some(keep) = &live {
                    out.gamma = bn.gamma.select(0, keep)?;
                    out.beta = bn.beta.select(0, keep)?;
                    out.running = bn.running.as_ref().map(|r| RunningStats {
                        mean: pick(&r.mean, keep),
                        var: pick(&r.var, keep),
                    });
                }
                out.gamma.clear_grad();
                out.beta.clear_grad();
                Layer::BatchNorm(out)
            }
            Layer::Relu { .. } => Layer::Relu { output: None },
            Layer::MaxPool { params, .. } => Layer::MaxPool {
                params: *params,
                argmax: None,
            },
            Layer::GlobalAvgPool { .. } => Layer::GlobalAvgPool { input_shape: None },
            Layer::Flatten { .. } => {
                if let FeatureShape::Spatial { h, w, .. } = prev {
                    per_channel *= h * w;
                }
                Layer::Flatten { input_shape: None }
            }
            Layer::Linear(lin) => {
                let mut weight = lin.weight.clone();
                weight.clear_grad();
                if let Some(keep) = live.take() {
                    let features: Vec<usize> = keep
                        .iter()
                        .flat_map(|&c| (c * per_channel)..((c + 1) * per_channel))
                        .collect();
                    weight = weight.select(1, &features)?;
                }
                per_channel = 1;
                let bias = lin.bias.clone().map(|mut b| {
                    b.clear_grad();
                    b
                });
                Layer::Linear(Linear::new(weight, bias))
            }
        };
        layers.push(new);
        prev = shape;
    }
    let out = ModelGraph {
        input: graph.input,
        layers,
    };
    out.validate()?;
    Ok(out)
}

/// Runs one eval-mode forward pass on zeros to confirm the graph is usable.
pub fn smoke_test<T: Scalar>(graph: &mut ModelGraph<T>) -> Result<()> {
    let [c, h, w] = graph.input;
    let x = Tensor::zeros([2, c, h, w]);
    let mode = if has_running_stats(graph) {
        crate::model::Mode::Eval
    } else {
        crate::model::Mode::Train
    };
    let y = graph.forward(&x, mode, None)?;
    graph.clear_caches();
    if y.shape() != [2, graph.classes()] || !y.is_finite() {
        return Err(Error::InvalidArgument("pruned graph failed its smoke test".into()));
    }
    Ok(())
}

fn has_running_stats<T: Scalar>(graph: &ModelGraph<T>) -> bool {
    graph.layers.iter().all(|l| match l {
        Layer::BatchNorm(bn) => bn.running.is_some(),
        _ => true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Architecture;
    use crate::model::Mode;
    use crate::prune::flops::FlopsModel;
    use crate::prune::score::ScoreKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_conv(flatten: bool) -> ModelGraph<f64> {
        let tail = if flatten { "flatten" } else { "globalavgpool\nflatten" };
        let a = Architecture::parse(&format!(
            "input channels=2 height=6 width=6\nconv out=4 kernel=3 padding=1 bias=true\nbatchnorm\nrelu\n\
             conv out=3 kernel=3 padding=1\nrelu\nmaxpool kernel=2\n{tail}\nlinear out=5\n"
        ))
        .unwrap();
        ModelGraph::from_architecture(&a, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    fn plan_for(g: &ModelGraph<f64>, kept: Vec<Vec<usize>>) -> PruningPlan {
        let f = FlopsModel::from_graph(g).unwrap();
        PruningPlan::from_kept(&f, kept, 0.1, ScoreKind::AbsSum, 0.5, vec![]).unwrap()
    }

    #[test]
    fn keep_all_is_identity() {
        let mut g = two_conv(true);
        let x = Tensor::randn([2, 2, 6, 6], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        g.forward(&x, Mode::Train, None).unwrap();
        let f = FlopsModel::from_graph(&g).unwrap();
        let plan = PruningPlan::keep_all(&f, ScoreKind::AbsSum, 0.5).unwrap();
        let mut p = apply_plan(&g, &plan).unwrap();
        let a = g.forward(&x, Mode::Eval, None).unwrap();
        let b = p.forward(&x, Mode::Eval, None).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn shapes_shrink() {
        for flatten in [true, false] {
            let g = two_conv(flatten);
            let plan = plan_for(&g, vec![vec![0, 2, 3], vec![1, 2]]);
            let mut p = apply_plan(&g, &plan).unwrap();
            assert_eq!(p.conv(0).unwrap().weight.shape(), &[3, 2, 3, 3]);
            assert_eq!(p.conv(0).unwrap().bias.as_ref().unwrap().len(), 3);
            assert_eq!(p.conv(3).unwrap().weight.shape(), &[2, 3, 3, 3]);
            let Layer::Linear(lin) = p.layers.last().unwrap() else { panic!() };
            assert_eq!(lin.in_features(), if flatten { 2 * 9 } else { 2 });
            smoke_test(&mut p).unwrap();
        }
    }

    #[test]
    fn rejects_foreign_plans() {
        let g = two_conv(true);
        let mut plan = plan_for(&g, vec![vec![0], vec![0]]);
        plan.layers[0].layer_id = 1;
        assert!(apply_plan(&g, &plan).is_err());
        let mut plan = plan_for(&g, vec![vec![0], vec![0]]);
        plan.layers[1].kept = vec![7];
        assert!(apply_plan(&g, &plan).is_err());
    }
}

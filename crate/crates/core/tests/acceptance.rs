//! Acceptance criteria, one test per criterion. Each prints a single
//! `[PASS]`/`[FAIL]` line before asserting.

mod common;

use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whitebox::arch::Architecture;
use whitebox::harness::{
    build_model, finetune_stage, load_data, mask_stage, phase_rng, pretrain_stage, prune_stage, run_pipeline,
    vote_stage, Phase, TrainConfig,
};
use whitebox::mask::{
    constant_labels, masked_conv_backward, masked_conv_forward, sparsity_penalty, ClasswiseMask, MaskSet,
    MaskVariant, NormKind, SoftLabelBatch, SparsityConfig,
};
use whitebox::model::{Conv2d, Layer, Mode, ModelGraph};
use whitebox::ops::{self, one_hot};
use whitebox::prune::flops::reduction;
use whitebox::prune::{
    apply_plan, channel_scores, fold_masks, global_vote, model_flops, smoke_test, ChannelScoreTable, FlopsModel,
    LayerScores, PruningPlan, ScoreKind,
};
use whitebox::{Error, Tensor};

const TOY_CONFIG: &str = include_str!("../../../configs/toy.conf");

fn within(start: Instant, limit: Duration) -> bool {
    start.elapsed() < limit
}

// ---------------------------------------------------------------- gradients

struct GradCase {
    op: &'static str,
    worst: f64,
    cases: usize,
}

fn check(case: &mut GradCase, analytic: &Tensor<f64>, numeric: Vec<f64>) {
    case.worst = case.worst.max(max_rel_err(analytic.data(), &numeric));
}

fn conv_case(rng: &mut ChaCha8Rng, case: &mut GradCase) {
    let n = rng.random_range(1..=3);
    let ci = rng.random_range(1..=3);
    let co = rng.random_range(1..=4);
    let k = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..=k / 2 + 1);
    let h = rng.random_range(k..=6);
    let w = rng.random_range(k..=6);
    let x = randn(&[n, ci, h, w], rng);
    let wt = randn(&[co, ci, k, k], rng);
    let b = randn(&[co], rng);
    let p = params(stride, pad);
    let y = ops::conv2d_forward(&x, &wt, Some(&b), p).unwrap();
    let r = randn(y.shape(), rng);
    let g = ops::conv2d_backward(&r, Some(&x), &wt, p).unwrap();
    check(case, &g.input, numeric_grad(&x, |x| project(&ops::conv2d_forward(x, &wt, Some(&b), p).unwrap(), &r)));
    check(case, &g.weight, numeric_grad(&wt, |w| project(&ops::conv2d_forward(&x, w, Some(&b), p).unwrap(), &r)));
    check(case, &g.bias, numeric_grad(&b, |b| project(&ops::conv2d_forward(&x, &wt, Some(b), p).unwrap(), &r)));
}

fn linear_case(rng: &mut ChaCha8Rng, case: &mut GradCase) {
    let n = rng.random_range(1..=4);
    let di = rng.random_range(1..=7);
    let dout = rng.random_range(1..=5);
    let x = randn(&[n, di], rng);
    let w = randn(&[dout, di], rng);
    let b = randn(&[dout], rng);
    let r = randn(&[n, dout], rng);
    let g = ops::linear_backward(&r, &x, &w).unwrap();
    check(case, &g.input, numeric_grad(&x, |x| project(&ops::linear_forward(x, &w, Some(&b)).unwrap(), &r)));
    check(case, &g.weight, numeric_grad(&w, |w| project(&ops::linear_forward(&x, w, Some(&b)).unwrap(), &r)));
    check(case, &g.bias, numeric_grad(&b, |b| project(&ops::linear_forward(&x, &w, Some(b)).unwrap(), &r)));
}

fn batchnorm_case(rng: &mut ChaCha8Rng, case: &mut GradCase) {
    let n = rng.random_range(2..=4);
    let c = rng.random_range(1..=3);
    let h = rng.random_range(1..=4);
    let w = rng.random_range(2..=4);
    let x = randn(&[n, c, h, w], rng);
    let gamma = randn(&[c], rng);
    let beta = randn(&[c], rng);
    let f = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| ops::batchnorm2d_forward_train(x, g, b).unwrap();
    let (y, cache, _, _) = f(&x, &gamma, &beta);
    let r = randn(y.shape(), rng);
    let (gx, gg, gb) = ops::batchnorm2d_backward(&r, &cache, &gamma).unwrap();
    check(case, &gx, numeric_grad(&x, |x| project(&f(x, &gamma, &beta).0, &r)));
    check(case, &gg, numeric_grad(&gamma, |g| project(&f(&x, g, &beta).0, &r)));
    check(case, &gb, numeric_grad(&beta, |b| project(&f(&x, &gamma, b).0, &r)));
}

fn channel_scale_case(rng: &mut ChaCha8Rng, case: &mut GradCase) {
    let n = rng.random_range(1..=3);
    let c = rng.random_range(1..=4);
    let h = rng.random_range(1..=4);
    let w = rng.random_range(1..=4);
    let x = randn(&[n, c, h, w], rng);
    let s = randn(&[n, c], rng);
    let r = randn(&[n, c, h, w], rng);
    let (gx, gs) = ops::channel_scale_backward(&r, &x, &s).unwrap();
    check(case, &gx, numeric_grad(&x, |x| project(&ops::channel_scale_forward(x, &s).unwrap(), &r)));
    check(case, &gs, numeric_grad(&s, |s| project(&ops::channel_scale_forward(&x, s).unwrap(), &r)));
}

fn masked_conv_case(rng: &mut ChaCha8Rng, case: &mut GradCase) {
    let n = rng.random_range(1..=3);
    let d = rng.random_range(1..=4);
    let ci = rng.random_range(1..=3);
    let co = rng.random_range(1..=4);
    let k = rng.random_range(1..=3);
    let pad = k / 2;
    let h = rng.random_range(k..=5);
    let w = rng.random_range(k..=5);
    let x = randn(&[n, ci, h, w], rng);
    let wt = randn(&[co, ci, k, k], rng);
    let b = randn(&[co], rng);
    let m = randn(&[d, co], rng);
    let soft = SoftLabelBatch {
        values: randn(&[n, d], rng),
        mu: 0.5,
        sigma: 1.0,
        rng_seed: 0,
    };
    let run = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>, m: &Tensor<f64>| {
        let conv = Conv2d::new(wt.clone(), Some(b.clone()), params(1, pad));
        let mask = ClasswiseMask::new(0, m.clone()).unwrap();
        masked_conv_forward(x, &conv, 0, &mask, Some(&soft)).unwrap()
    };
    let (y, cache) = run(&x, &wt, &b, &m);
    let r = randn(y.shape(), rng);
    let conv = Conv2d::new(wt.clone(), Some(b.clone()), params(1, pad));
    let mask = ClasswiseMask::new(0, m.clone()).unwrap();
    let g = masked_conv_backward(&r, &cache, &conv, &mask, &soft).unwrap();
    check(case, &g.input, numeric_grad(&x, |x| project(&run(x, &wt, &b, &m).0, &r)));
    check(case, &g.weight, numeric_grad(&wt, |wt| project(&run(&x, wt, &b, &m).0, &r)));
    check(case, &g.bias, numeric_grad(&b, |b| project(&run(&x, &wt, b, &m).0, &r)));
    check(case, &g.mask, numeric_grad(&m, |m| project(&run(&x, &wt, &b, m).0, &r)));
}

fn cross_entropy_case(rng: &mut ChaCha8Rng, case: &mut GradCase) {
    let n = rng.random_range(1..=5);
    let d = rng.random_range(2..=7);
    let logits = randn(&[n, d], rng).map(|v| 3.0 * v);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..d)).collect();
    let y = one_hot::<f64>(&labels, d).unwrap();
    let (_, g) = ops::softmax_cross_entropy(&logits, &y).unwrap();
    check(case, &g, numeric_grad(&logits, |l| ops::softmax_cross_entropy(l, &y).unwrap().0));
}

fn penalty_case(rng: &mut ChaCha8Rng, case: &mut GradCase) {
    let d = rng.random_range(1..=6);
    let c = rng.random_range(1..=6);
    let lambda = rng.random_range(0.1..2.0);
    let cfg = SparsityConfig::new(lambda, NormKind::L2Group).unwrap();
    // The norm is not differentiable at a zero column; keep every entry
    // clear of zero so the finite-difference step stays in the smooth region.
    let m = Tensor::from_fn([d, c], |_| {
        let v: f64 = rng.random_range(0.2..1.5);
        if rng.random_bool(0.5) { v } else { -v }
    });
    let value = |m: &Tensor<f64>| {
        lambda * sparsity_penalty(&[ClasswiseMask::new(0, m.clone()).unwrap()], &cfg).unwrap().value
    };
    let p = sparsity_penalty(&[ClasswiseMask::new(0, m.clone()).unwrap()], &cfg).unwrap();
    check(case, &p.grads[0], numeric_grad(&m, value));
}

#[test]
fn gradient_suite() {
    let start = Instant::now();
    type CaseFn = fn(&mut ChaCha8Rng, &mut GradCase);
    let ops: [(&str, CaseFn); 7] = [
        ("conv", conv_case),
        ("linear", linear_case),
        ("batchnorm", batchnorm_case),
        ("channel_scale", channel_scale_case),
        ("masked_conv", masked_conv_case),
        ("cross_entropy", cross_entropy_case),
        ("l2_group_penalty", penalty_case),
    ];
    let mut results = Vec::new();
    for (i, (op, f)) in ops.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let mut case = GradCase { op, worst: 0.0, cases: 0 };
        for _ in 0..24 {
            f(&mut rng, &mut case);
            case.cases += 1;
        }
        results.push(case);
    }
    let ok = results.iter().all(|c| c.worst < 1e-4 && c.cases >= 20) && within(start, Duration::from_secs(120));
    let detail: Vec<String> = results.iter().map(|c| format!("{} {:.1e} ({})", c.op, c.worst, c.cases)).collect();
    assert!(verdict(
        "gradient suite",
        ok,
        format!("max rel err per op: {}; {:.1?}", detail.join(", "), start.elapsed())
    ));
}

// --------------------------------------------------------- mask equivalence

#[test]
fn aggregated_scale_matches_literal_sum() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=3);
        let d = rng.random_range(1..=8);
        let ci = rng.random_range(1..=4);
        let co = rng.random_range(1..=16);
        let k = [1, 3][rng.random_range(0..2)];
        let h = rng.random_range(k..=7);
        let x = randn(&[n, ci, h, h], &mut rng);
        let wt = randn(&[co, ci, k, k], &mut rng);
        let b = randn(&[co], &mut rng);
        let m = randn(&[d, co], &mut rng);
        let soft = randn(&[n, d], &mut rng);
        let conv = Conv2d::new(wt.clone(), Some(b.clone()), params(1, k / 2));
        let mask = ClasswiseMask::new(3, m.clone()).unwrap();
        let batch = SoftLabelBatch { values: soft.clone(), mu: 0.0, sigma: 1.0, rng_seed: 0 };
        let (fast, _) = masked_conv_forward(&x, &conv, 3, &mask, Some(&batch)).unwrap();

        // One convolution per class with the weights scaled by that class's
        // mask row, weighted by the sample's label entry, plus the bias.
        let mut literal = vec![0.0; fast.len()];
        let plane = fast.len() / (n * co);
        for dd in 0..d {
            let mut wd = wt.clone();
            for o in 0..co {
                let s = m.data()[dd * co + o];
                let per = wt.len() / co;
                wd.data_mut()[o * per..(o + 1) * per].iter_mut().for_each(|v| *v *= s);
            }
            let y = naive_conv(&x, &wd, None, 1, k / 2);
            for i in 0..n {
                let a = soft.data()[i * d + dd];
                for (lv, yv) in literal[i * co * plane..(i + 1) * co * plane]
                    .iter_mut()
                    .zip(&y.data()[i * co * plane..(i + 1) * co * plane])
                {
                    *lv += a * yv;
                }
            }
        }
        for (i, v) in literal.iter_mut().enumerate() {
            *v += b.data()[(i / plane) % co];
        }
        let diff = fast.data().iter().zip(&literal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    let ok = worst < 1e-4 && within(start, Duration::from_secs(60));
    assert!(verdict(
        "aggregated mask forward equals per-class convolution sum",
        ok,
        format!("max abs diff {worst:.2e} over 50 instances; {:.1?}", start.elapsed())
    ));
}

// ------------------------------------------------------------- random nets

#[derive(Clone, Copy, PartialEq)]
enum Head {
    Pooled,
    Flattened,
}

/// Small sequential conv net; at most `max_channels` conv channels in total.
fn random_arch(rng: &mut ChaCha8Rng, max_channels: usize, batchnorm: bool) -> Architecture {
    let convs = rng.random_range(2..=4usize);
    let mut text = format!("input channels={} height=8 width=8\n", rng.random_range(1..=3));
    let mut hw = 8;
    let mut budget = max_channels;
    for i in 0..convs {
        let rest = convs - i - 1;
        let out = rng.random_range(2..=(budget - 2 * rest).min(8));
        budget -= out;
        let k = [1, 3][rng.random_range(0..2)];
        text += &format!("conv out={out} kernel={k} padding={} bias={}\n", k / 2, rng.random_bool(0.5));
        if batchnorm {
            text += "batchnorm\n";
        }
        text += "relu\n";
        if hw >= 4 && rng.random_bool(0.4) {
            text += "maxpool kernel=2 stride=2\n";
            hw /= 2;
        }
    }
    let head = if rng.random_bool(0.5) { Head::Pooled } else { Head::Flattened };
    if head == Head::Pooled {
        text += "globalavgpool\n";
    }
    text += &format!("flatten\nlinear out={}\n", rng.random_range(2..=5));
    Architecture::parse(&text).unwrap()
}

/// MACs of a sequential conv net with the given kept counts per conv layer,
/// walked directly from the description text.
fn oracle_macs(arch: &Architecture, kept: &[usize]) -> u64 {
    let [mut c, mut h, mut w] = arch.input;
    let mut conv_idx = 0;
    let mut flat: Option<usize> = None;
    let mut total = 0u64;
    for line in arch.to_text().lines().skip(1) {
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let kv = |key: &str| -> Option<usize> {
            line.split_whitespace().find_map(|p| p.strip_prefix(&format!("{key}="))?.parse().ok())
        };
        match kind {
            "conv" => {
                let k = kv("kernel").unwrap();
                let s = kv("stride").unwrap_or(1);
                let p = kv("padding").unwrap_or(0);
                let out = kept[conv_idx];
                conv_idx += 1;
                h = (h + 2 * p - k) / s + 1;
                w = (w + 2 * p - k) / s + 1;
                total += (out * c * k * k * h * w) as u64;
                c = out;
            }
            "maxpool" => {
                h /= 2;
                w /= 2;
            }
            "globalavgpool" => {
                h = 1;
                w = 1;
            }
            "flatten" => flat = Some(c * h * w),
            "linear" => {
                let out = kv("out").unwrap();
                total += (flat.unwrap() * out) as u64;
                flat = Some(out);
            }
            _ => {}
        }
    }
    total
}

fn random_masks(model: &ModelGraph<f32>, classes: usize, rng: &mut ChaCha8Rng) -> MaskSet<f32> {
    let mut masks = MaskSet::for_model(model, classes);
    for m in &mut masks.masks {
        m.values.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..1.5));
    }
    masks
}

/// Puts random values into batchnorm parameters and running statistics.
fn randomize_batchnorm(model: &mut ModelGraph<f32>, rng: &mut ChaCha8Rng) {
    let x = Tensor::<f32>::randn([4, model.input[0], model.input[1], model.input[2]], 1.0, rng);
    for _ in 0..3 {
        model.forward(&x, Mode::Train, None).unwrap();
    }
    model.clear_caches();
    for layer in &mut model.layers {
        if let Layer::BatchNorm(bn) = layer {
            bn.gamma.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
            bn.beta.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
}

fn rel_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let scale = b.data().iter().fold(0f64, |m, v| m.max(v.abs() as f64)).max(1e-12);
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
        / scale
}

// -------------------------------------------------------------------- fold

#[test]
fn fold_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let arch = random_arch(&mut rng, 24, i % 2 == 0);
        let mut model = ModelGraph::<f32>::from_architecture(&arch, &mut rng).unwrap();
        randomize_batchnorm(&mut model, &mut rng);
        let classes = rng.random_range(2..=10);
        let masks = random_masks(&model, classes, &mut rng);
        let mu = rng.random_range(0.1..1.0);
        let x = Tensor::<f32>::randn([5, model.input[0], 8, 8], 1.0, &mut rng);

        let soft = constant_labels::<f32>(5, classes, mu);
        let scales = masks.scales(&soft, model.layers.len()).unwrap();
        let masked = model.forward(&x, Mode::Eval, Some(&scales)).unwrap();
        let mut folded = model.clone();
        fold_masks(&mut folded, &masks, MaskVariant::ClassWise.label_free_value(mu, classes)).unwrap();
        let plain = folded.forward(&x, Mode::Eval, None).unwrap();
        worst = worst.max(rel_diff(&plain, &masked));
    }
    let ok = worst < 1e-5 && within(start, Duration::from_secs(60));
    assert!(verdict(
        "fold exactness",
        ok,
        format!("max rel err {worst:.2e} over 20 nets; {:.1?}", start.elapsed())
    ));
}

// ------------------------------------------------------------------ voting

#[test]
fn voting_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let (mut agree, mut minimal, mut unreachable) = (0, 0, 0);
    let mut failures = Vec::new();
    for net in 0..100 {
        let arch = random_arch(&mut rng, 24, net % 3 == 0);
        let flops = FlopsModel::from_architecture(&arch).unwrap();
        let full = flops.full_counts();
        assert!(full.iter().sum::<usize>() <= 24);
        assert_eq!(flops.baseline(), oracle_macs(&arch, &full));
        // Coarse scores so that ties occur.
        let scores = ChannelScoreTable {
            kind: ScoreKind::AbsSum,
            layers: flops
                .units
                .iter()
                .map(|u| LayerScores {
                    layer_id: u.layer_id,
                    scores: (0..u.channels).map(|_| (rng.random_range(0..20) as f64) / 4.0).collect(),
                })
                .collect(),
        };
        let alpha = rng.random_range(0.0..0.95);

        // Every channel in (score, layer, channel) order, minus the best
        // channel of each layer, which can never be removed.
        let mut order: Vec<(f64, usize, usize, usize)> = Vec::new();
        for (u, l) in scores.layers.iter().enumerate() {
            for (c, &s) in l.scores.iter().enumerate() {
                order.push((s, l.layer_id, c, u));
            }
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut last_seen = vec![0; full.len()];
        for (pos, o) in order.iter().enumerate() {
            last_seen[o.3] = pos;
        }
        let removable: Vec<_> = order.iter().enumerate().filter(|(p, o)| last_seen[o.3] != *p).map(|(_, o)| *o).collect();

        let base = oracle_macs(&arch, &full);
        let rate_of = |prefix: &[(f64, usize, usize, usize)]| {
            let mut kept = full.clone();
            for o in prefix {
                kept[o.3] -= 1;
            }
            reduction(base, oracle_macs(&arch, &kept))
        };
        let expected = (0..=removable.len()).find(|&k| rate_of(&removable[..k]) >= alpha);

        match (global_vote(&scores, &flops, alpha, 0.5), expected) {
            (Ok(plan), Some(k)) => {
                let want: Vec<(usize, usize)> = removable[..k].iter().map(|o| (o.1, o.2)).collect();
                let rate = rate_of(&removable[..k]);
                if plan.removal_order == want && (plan.achieved_rate - rate).abs() < 1e-12 {
                    agree += 1;
                } else {
                    failures.push(format!("net {net}: plan differs from oracle"));
                }
                let undo_ok = k == 0 || rate_of(&removable[..k - 1]) < alpha;
                if plan.achieved_rate >= alpha && undo_ok {
                    minimal += 1;
                } else {
                    failures.push(format!("net {net}: plan not minimal"));
                }
            }
            (Err(Error::UnreachableRate { .. }), None) => {
                agree += 1;
                minimal += 1;
                unreachable += 1;
            }
            (got, want) => failures.push(format!("net {net}: vote {:?} vs oracle {want:?}", got.map(|p| p.achieved_rate))),
        }
    }
    let ok = agree == 100 && minimal == 100 && within(start, Duration::from_secs(60));
    assert!(
        verdict(
            "voting oracle",
            ok,
            format!(
                "{agree}/100 equal to oracle prefix, {minimal}/100 minimal ({unreachable} unreachable targets); {:.1?}",
                start.elapsed()
            )
        ),
        "{failures:?}"
    );
}

// ------------------------------------------------------------------- flops

#[test]
fn flops_anchor() {
    let flops = FlopsModel::from_architecture(&Architecture::resnet50()).unwrap();
    let total = flops.baseline() as f64;
    let anchor = 4.11e9;
    let dev = (total - anchor) / anchor;
    let cross = 1.0 - 2.22e9 / anchor;
    let cross_own = 1.0 - 2.22e9 / total;
    let ok = dev.abs() <= 0.02 && (cross - 0.456).abs() <= 0.01 && (cross_own - 0.456).abs() <= 0.01;
    assert!(verdict(
        "FLOPs anchor",
        ok,
        format!(
            "ResNet-50 counts {total:.0} MACs ({:+.2}% vs 4.11G); 2.22G is a {:.2}% reduction ({:.2}% from our count)",
            100.0 * dev,
            100.0 * cross,
            100.0 * cross_own
        )
    ));
}

// ----------------------------------------------------------------- surgery

#[test]
fn surgery_soundness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let mut sound = 0;
    for i in 0..30 {
        let batchnorm = i % 2 == 0;
        let arch = random_arch(&mut rng, 24, batchnorm);
        let mut model = ModelGraph::<f32>::from_architecture(&arch, &mut rng).unwrap();
        randomize_batchnorm(&mut model, &mut rng);
        let flops = FlopsModel::from_graph(&model).unwrap();

        // Silence a random subset of channels in every conv layer, keeping at
        // least one alive.
        let mut kept = Vec::new();
        for unit in &flops.units {
            let alive: Vec<usize> = (0..unit.channels).filter(|&c| c == 0 || rng.random_bool(0.5)).collect();
            let dead: Vec<usize> = (0..unit.channels).filter(|c| !alive.contains(c)).collect();
            let id = unit.layer_id;
            if batchnorm {
                let Layer::BatchNorm(bn) = &mut model.layers[id + 1] else { panic!("conv without batchnorm") };
                for &c in &dead {
                    bn.gamma.data_mut()[c] = 0.0;
                    bn.beta.data_mut()[c] = 0.0;
                }
            } else {
                let conv = model.conv_mut(id).unwrap();
                let per = conv.weight.len() / conv.out_channels();
                for &c in &dead {
                    conv.weight.data_mut()[c * per..(c + 1) * per].iter_mut().for_each(|v| *v = 0.0);
                    if let Some(b) = conv.bias.as_mut() {
                        b.data_mut()[c] = 0.0;
                    }
                }
            }
            kept.push(alive);
        }
        let plan = PruningPlan::from_kept(&flops, kept, 0.0, ScoreKind::AbsSum, 0.5, Vec::new()).unwrap();
        let mut pruned = apply_plan(&model, &plan).unwrap();
        let x = Tensor::<f32>::randn([3, model.input[0], 8, 8], 1.0, &mut rng);
        let before = model.forward(&x, Mode::Eval, None).unwrap();
        let after = pruned.forward(&x, Mode::Eval, None).unwrap();
        worst = worst.max(rel_diff(&after, &before));

        let shapes_ok = pruned.validate().is_ok()
            && smoke_test(&mut pruned).is_ok()
            && model_flops(&pruned, &FlopsModel::from_graph(&pruned).unwrap().full_counts()).unwrap()
                == plan.pruned_flops
            && pruned.architecture().unwrap().shapes().is_ok();
        if shapes_ok {
            sound += 1;
        }
    }
    let ok = worst < 1e-5 && sound == 30 && within(start, Duration::from_secs(60));
    assert!(verdict(
        "surgery soundness",
        ok,
        format!(
            "max rel output change {worst:.2e}; {sound}/30 pruned graphs pass shape, FLOPs and smoke checks; {:.1?}",
            start.elapsed()
        )
    ));
}

// -------------------------------------------------------------- end to end

fn toy_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::parse(TOY_CONFIG).unwrap();
    cfg.seed = seed;
    cfg
}

struct SeedResult {
    white_box: f64,
    dense: f64,
    random: f64,
    shared: f64,
    rate: f64,
    random_rate: f64,
    shared_rate: f64,
}

fn run_seed(seed: u64) -> SeedResult {
    let cfg = toy_config(seed);
    let data = load_data::<f32>(&cfg).unwrap();
    let mut model = build_model(&cfg, &data).unwrap();
    pretrain_stage(&cfg, &mut model, &data).unwrap();
    let stage = mask_stage(&cfg, model.clone(), &data).unwrap();

    let plan = vote_stage(&cfg, &stage, None).unwrap();
    let mut pruned = prune_stage(&cfg, &stage, &plan).unwrap();
    let (_, white_box) = finetune_stage(&cfg, &mut pruned, &data).unwrap();

    let mut dense_cfg = cfg.clone();
    dense_cfg.alpha = 0.0;
    let keep_all = vote_stage(&dense_cfg, &stage, None).unwrap();
    let mut dense_model = prune_stage(&dense_cfg, &stage, &keep_all).unwrap();
    let (_, dense) = finetune_stage(&dense_cfg, &mut dense_model, &data).unwrap();

    let mut matched = cfg.clone();
    matched.alpha = plan.achieved_rate;
    let scores = channel_scores(&stage.masks.masks, cfg.score_kind).unwrap();
    let random_scores = scores.random_like(&mut phase_rng(seed, Phase::Vote));
    let random_plan = vote_stage(&matched, &stage, Some(&random_scores)).unwrap();
    let mut random_model = prune_stage(&matched, &stage, &random_plan).unwrap();
    let (_, random) = finetune_stage(&matched, &mut random_model, &data).unwrap();

    let mut shared_cfg = matched.clone();
    shared_cfg.mask_variant = MaskVariant::Shared;
    let shared_stage = mask_stage(&shared_cfg, model, &data).unwrap();
    let shared_plan = vote_stage(&shared_cfg, &shared_stage, None).unwrap();
    let mut shared_model = prune_stage(&shared_cfg, &shared_stage, &shared_plan).unwrap();
    let (_, shared) = finetune_stage(&shared_cfg, &mut shared_model, &data).unwrap();

    println!(
        "  seed {seed}: white-box {white_box:.4} (rate {:.4}), dense {dense:.4}, random {random:.4} (rate {:.4}), \
         shared mask {shared:.4} (rate {:.4})",
        plan.achieved_rate, random_plan.achieved_rate, shared_plan.achieved_rate
    );
    SeedResult {
        white_box,
        dense,
        random,
        shared,
        rate: plan.achieved_rate,
        random_rate: random_plan.achieved_rate,
        shared_rate: shared_plan.achieved_rate,
    }
}

#[test]
fn end_to_end_efficacy_and_ablation() {
    let start = Instant::now();
    let cfg = toy_config(0);
    assert_eq!(cfg.alpha, 0.5);
    assert_eq!(cfg.synth_classes, 10);
    assert_eq!(cfg.synth_train_per_class * 10, 5000);
    assert_eq!(cfg.synth_test_per_class * 10, 1000);
    assert_eq!(Architecture::load(&cfg.arch).unwrap().input, [3, 32, 32]);

    let runs: Vec<SeedResult> = (0..3).map(run_seed).collect();
    let mean = |f: fn(&SeedResult) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let (wb, dense, random, shared) = (mean(|r| r.white_box), mean(|r| r.dense), mean(|r| r.random), mean(|r| r.shared));
    let rates_matched = runs.iter().all(|r| r.random_rate >= r.rate && r.shared_rate >= r.rate);
    let elapsed = start.elapsed();
    let in_budget = elapsed < Duration::from_secs(30 * 60);

    let near_dense = dense - wb <= 0.02;
    let beats_random = wb >= random;
    let e2e = verdict(
        "end-to-end efficacy",
        near_dense && beats_random && rates_matched && in_budget,
        format!(
            "3-seed mean white-box {:.2}% vs dense {:.2}% (gap {:.2} points, limit 2) vs random {:.2}%; {elapsed:.1?}",
            100.0 * wb,
            100.0 * dense,
            100.0 * (dense - wb),
            100.0 * random
        ),
    );
    let ablation = verdict(
        "ablation without class-wise mask",
        wb >= shared && rates_matched,
        format!("3-seed mean white-box {:.2}% vs shared mask {:.2}%", 100.0 * wb, 100.0 * shared),
    );
    assert!(e2e && ablation);
}

// ------------------------------------------------------------- determinism

#[test]
fn determinism() {
    let mut cfg = toy_config(7);
    cfg.apply_overrides(&[
        "synth_train_per_class=100",
        "synth_test_per_class=20",
        "pretrain_epochs=1",
        "pretrain_milestones=",
        "mask_epochs=1",
        "finetune_epochs=2",
        "milestones=1",
    ])
    .unwrap();
    let data = load_data::<f32>(&cfg).unwrap();
    let a = run_pipeline(&cfg, &data, None).unwrap();
    let b = run_pipeline(&cfg, &data, None).unwrap();
    let same_plan = a.plan.to_text().as_bytes() == b.plan.to_text().as_bytes();
    let same_acc = a.final_accuracy.to_bits() == b.final_accuracy.to_bits();
    assert!(verdict(
        "determinism",
        same_plan && same_acc && a.results_text() == b.results_text(),
        format!("plans byte-identical: {same_plan}; final accuracy {} vs {}", a.final_accuracy, b.final_accuracy)
    ));
}

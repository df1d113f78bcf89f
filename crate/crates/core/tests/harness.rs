use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whitebox::harness::{
    accuracy, build_model, evaluate, finetune_stage, load_data, mask_stage, phase_rng, pretrain_stage, prune_stage,
    run_pipeline, train_dense, vote_stage, Phase, RunDir, SgdSettings, TrainConfig,
};
use whitebox::mask::{MaskSet, MaskVariant};
use whitebox::model::Mode;
use whitebox::optim::StepSchedule;
use whitebox::prune::FlopsModel;
use whitebox::{Error, Tensor};

const TINY_ARCH: &str = "\
input channels=3 height=8 width=8
conv out=6 kernel=3 padding=1
batchnorm
relu
maxpool kernel=2 stride=2
conv out=8 kernel=3 padding=1
batchnorm
relu
globalavgpool
flatten
linear out=4
";

fn tiny_config(dir: &Path, seed: u64) -> TrainConfig {
    let arch = dir.join("tiny.arch");
    std::fs::write(&arch, TINY_ARCH).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.apply_overrides(&[
        format!("arch={}", arch.display()),
        "dataset=synth".into(),
        "synth_classes=4".into(),
        "synth_train_per_class=40".into(),
        "synth_test_per_class=15".into(),
        "batch_size=16".into(),
        "lr=0.05".into(),
        "mask_epochs=2".into(),
        "finetune_epochs=2".into(),
        "milestones=1".into(),
        "alpha=0.3".into(),
    ])
    .unwrap();
    cfg.seed = seed;
    cfg
}

#[test]
fn frozen_hard_masks_without_penalty_match_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut gaps = Vec::new();
    for seed in 0..3 {
        let mut cfg = tiny_config(dir.path(), seed);
        cfg.apply_overrides(&["lambda=0", "freeze_masks=true", "mask_variant=hard", "augment=false"]).unwrap();
        let data = load_data::<f32>(&cfg).unwrap();
        let model = build_model(&cfg, &data).unwrap();
        let stage = mask_stage(&cfg, model.clone(), &data).unwrap();
        assert!(stage.masks.masks.iter().all(|m| m.values.data().iter().all(|&v| v == 1.0)));

        let mut plain = model;
        let sgd = SgdSettings { momentum: cfg.momentum, weight_decay: cfg.weight_decay, batch_size: cfg.batch_size };
        let curves = train_dense(
            &mut plain,
            &data,
            cfg.effective_mask_epochs(),
            &StepSchedule::constant(cfg.lr),
            sgd,
            Phase::Mask,
            false,
            &mut phase_rng(seed, Phase::Mask),
        )
        .unwrap();
        let masked = stage.dense_accuracy().unwrap();
        gaps.push(masked - curves.last().unwrap().test_accuracy);
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean.abs() < 0.1, "mean accuracy gap {mean} ({gaps:?})");
}

#[test]
fn strong_penalty_shrinks_masks_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), 1);
    cfg.apply_overrides(&["lambda=10", "mask_epochs=3", "lr=0.01"]).unwrap();
    let data = load_data::<f32>(&cfg).unwrap();
    let model = build_model(&cfg, &data).unwrap();
    let initial = MaskSet::for_model(&model, 4).mean_column_norm();
    let stage = mask_stage(&cfg, model, &data).unwrap();
    let mut norms = vec![initial];
    norms.extend(stage.curves.iter().map(|r| r.mask_norm.unwrap()));
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    assert!(stage.curves.iter().all(|r| r.penalty.is_some()));
}

#[test]
fn divergence_is_reported_with_phase() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), 0);
    cfg.apply_overrides(&["lr=1e30", "momentum=0", "weight_decay=0"]).unwrap();
    let data = load_data::<f32>(&cfg).unwrap();
    let model = build_model(&cfg, &data).unwrap();
    let err = mask_stage(&cfg, model, &data).unwrap_err();
    assert!(matches!(err, Error::Phase { phase: "mask", .. }), "{err}");
    assert!(matches!(err.root(), Error::Diverged { .. }), "{err}");
}

#[test]
fn zero_finetune_epochs_leave_the_model_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), 2);
    cfg.apply_overrides(&["pretrain_epochs=1", "finetune_epochs=0", "milestones="]).unwrap();
    let data = load_data::<f32>(&cfg).unwrap();
    let mut model = build_model(&cfg, &data).unwrap();
    pretrain_stage(&cfg, &mut model, &data).unwrap();
    let before = model.named_tensors();
    let (curves, acc) = finetune_stage(&cfg, &mut model, &data).unwrap();
    assert!(curves.is_empty());
    assert_eq!(model.named_tensors(), before);
    assert_eq!(acc, evaluate(&mut model, &data.test, &data.pipeline, None, 7).unwrap());
}

#[test]
fn recorded_learning_rates_follow_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), 3);
    cfg.apply_overrides(&["finetune_epochs=5", "milestones=1,3", "lr=0.04", "lr_factor=0.5"]).unwrap();
    let data = load_data::<f32>(&cfg).unwrap();
    let mut model = build_model(&cfg, &data).unwrap();
    let (curves, _) = finetune_stage(&cfg, &mut model, &data).unwrap();
    let lrs: Vec<f64> = curves.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, vec![0.04, 0.02, 0.02, 0.01, 0.01]);
}

#[test]
fn evaluation_examples() {
    let logits = Tensor::<f64>::new([1, 3], vec![0.1, 2.0, -1.0]).unwrap();
    assert_eq!(accuracy(&logits, &[1]).unwrap(), 1.0);

    let constant = Tensor::<f64>::from_fn([100, 10], |i| if i % 10 == 3 { 1.0 } else { 0.0 });
    let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
    assert_eq!(accuracy(&constant, &labels).unwrap(), 0.1);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.random_range(1..40);
        let d = rng.random_range(2..8);
        let logits = Tensor::<f64>::randn([n, d], 1.0, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..d)).collect();
        let mut hits = 0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &logits.data()[i * d..(i + 1) * d];
            let best = (0..d).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hits += usize::from(best == y);
        }
        assert_eq!(accuracy(&logits, &labels).unwrap(), hits as f64 / n as f64);
    }
    assert!(accuracy(&Tensor::<f64>::zeros([0, 3]), &[]).is_err());
}

#[test]
fn empty_test_set_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 0);
    let data = load_data::<f32>(&cfg).unwrap();
    let mut model = build_model(&cfg, &data).unwrap();
    let empty = data.test.subset(&[]);
    let err = evaluate(&mut model, &empty, &data.pipeline, None, 8).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn zero_budget_prunes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), 4);
    cfg.alpha = 0.0;
    let data = load_data::<f32>(&cfg).unwrap();
    let report = run_pipeline(&cfg, &data, None).unwrap();
    assert_eq!(report.plan.pruned_flops, report.plan.baseline_flops);
    assert!(report.plan.layers.iter().all(|l| l.kept.len() == l.original));
}

#[test]
fn achieved_rate_is_within_one_channel_of_the_target() {
    let dir = tempfile::tempdir().unwrap();
    for alpha in ["0.1", "0.3", "0.5"] {
        let mut cfg = tiny_config(dir.path(), 5);
        cfg.apply_overrides(&[format!("alpha={alpha}"), "finetune_epochs=1".into(), "milestones=".into()]).unwrap();
        let data = load_data::<f32>(&cfg).unwrap();
        let report = run_pipeline(&cfg, &data, None).unwrap();
        let plan = &report.plan;
        assert_eq!(report.achieved_rate(), plan.achieved_rate);
        assert!(plan.achieved_rate >= cfg.alpha);

        // Putting back the last removed channel must drop below the target.
        let flops = FlopsModel::from_architecture(&whitebox::arch::Architecture::parse(TINY_ARCH).unwrap()).unwrap();
        let mut kept = plan.kept_counts();
        let (layer, _) = *plan.removal_order.last().unwrap();
        kept[flops.unit_of_layer(layer).unwrap()] += 1;
        assert!(flops.rate(&kept).unwrap() < cfg.alpha);
    }
}

#[test]
fn ablation_variants_run_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    for variant in [MaskVariant::Hard, MaskVariant::Shared] {
        let mut cfg = tiny_config(dir.path(), 6);
        cfg.mask_variant = variant;
        let data = load_data::<f32>(&cfg).unwrap();
        let report = run_pipeline(&cfg, &data, None).unwrap();
        assert!(report.final_accuracy.is_finite());
        assert!(report.plan.achieved_rate >= cfg.alpha);
    }
}

#[test]
fn artifacts_resume_to_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), 8);
    cfg.pretrain_epochs = 1;
    let data = load_data::<f32>(&cfg).unwrap();
    let out = dir.path().join("run");
    let report = run_pipeline(&cfg, &data, Some(&out)).unwrap();

    let run = RunDir::open(&out).unwrap();
    for name in [
        "config.txt",
        "plan.txt",
        "rates.csv",
        "report.txt",
        "curves.csv",
        "ckpt_pretrain.bin",
        "ckpt_mask.bin",
        "ckpt_pruned.bin",
        "ckpt_finetune.bin",
    ] {
        assert!(run.file(name).is_file(), "missing {name}");
    }
    assert_eq!(run.load_config().unwrap(), cfg);

    // From the pretrain checkpoint.
    let pretrained = run.load_pretrain::<f32>().unwrap();
    let stage = mask_stage(&cfg, pretrained, &data).unwrap();
    let plan = vote_stage(&cfg, &stage, None).unwrap();
    assert_eq!(plan.to_text(), run.load_plan().unwrap().to_text());

    // From the mask checkpoint.
    let stage = run.load_mask_stage::<f32>().unwrap();
    let plan = vote_stage(&cfg, &stage, None).unwrap();
    assert_eq!(plan, report.plan);
    let mut pruned = prune_stage(&cfg, &stage, &plan).unwrap();
    let (_, acc) = finetune_stage(&cfg, &mut pruned, &data).unwrap();
    assert_eq!(acc, report.final_accuracy);

    // From the pruned checkpoint.
    let mut pruned = run.load_pruned::<f32>().unwrap();
    let (_, acc) = finetune_stage(&cfg, &mut pruned, &data).unwrap();
    let resumed = run.assemble_report(acc, Vec::new()).unwrap();
    assert_eq!(resumed.results_text(), report.results_text());

    // The final checkpoint evaluates to the reported accuracy.
    let mut last = run.load_finetune::<f32>().unwrap();
    let acc = evaluate(&mut last, &data.test, &data.pipeline, None, 32).unwrap();
    assert_eq!(acc, report.final_accuracy);
}

#[test]
fn pretraining_is_optional_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), 9);
    cfg.pretrain_epochs = 2;
    let data = load_data::<f32>(&cfg).unwrap();
    let mut a = build_model(&cfg, &data).unwrap();
    let mut b = a.clone();
    let ca = pretrain_stage(&cfg, &mut a, &data).unwrap();
    let cb = pretrain_stage(&cfg, &mut b, &data).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.named_tensors(), b.named_tensors());
    let x = Tensor::<f32>::zeros([1, 3, 8, 8]);
    assert!(a.forward(&x, Mode::Eval, None).is_ok());
}

#[test]
fn mismatched_architecture_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), 0);
    let data = load_data::<f32>(&cfg).unwrap();
    cfg.arch = "toy4".into();
    assert!(matches!(build_model(&cfg, &data).unwrap_err(), Error::Config(_)));
}

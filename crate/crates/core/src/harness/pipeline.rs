use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::Architecture;
use crate::data::{load_cifar10_dir, synth_blobs_split, AugmentConfig, BlobStyle};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetKind, TrainConfig};
use crate::harness::report::{EpochRecord, RunReport};
use crate::harness::rundir::RunDir;
use crate::harness::train::{evaluate, train_dense, train_masks, Datasets, MaskSettings, SgdSettings};
use crate::harness::Phase;
use crate::mask::MaskSet;
use crate::model::ModelGraph;
use crate::prune::{apply_plan, channel_scores, fold_masks, global_vote, smoke_test, ChannelScoreTable, FlopsModel, PruningPlan};
use crate::scalar::Scalar;

pub const DATA_DIR_ENV: &str = "WHITEBOX_DATA_DIR";

/// Independent random stream for one phase of a seeded run.
pub fn phase_rng(seed: u64, phase: Phase) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase as u64 + 1);
    rng
}

fn sgd(cfg: &TrainConfig) -> SgdSettings {
    SgdSettings {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        batch_size: cfg.batch_size,
    }
}

/// Loads the configured dataset and derives normalization statistics from
/// its training split.
pub fn load_data<T: Scalar>(cfg: &TrainConfig) -> Result<Datasets<T>> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Synth => {
            let arch = load_arch(cfg)?;
            let style = BlobStyle {
                jitter: cfg.synth_jitter,
                noise: cfg.synth_noise,
                distractors: cfg.synth_distractors,
                ..BlobStyle::default()
            };
            synth_blobs_split(
                cfg.synth_classes,
                cfg.synth_train_per_class,
                cfg.synth_test_per_class,
                arch.input,
                style,
                cfg.data_seed,
            )
            .map_err(|e| Error::Data(e.to_string()))?
        }
        DatasetKind::Cifar10 => {
            let dir = cfg
                .data_dir
                .clone()
                .or_else(|| std::env::var(DATA_DIR_ENV).ok())
                .ok_or_else(|| Error::Data(format!("no data_dir configured and {DATA_DIR_ENV} is unset")))?;
            load_cifar10_dir(&dir)?
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("training and test splits must be nonempty".into()));
    }
    let pipeline = AugmentConfig {
        pad_crop: cfg.pad_crop,
        hflip_prob: cfg.hflip_prob,
        ..AugmentConfig::for_dataset(&train)
    };
    Ok(Datasets {
        train,
        test,
        pipeline,
        augment: cfg.augment,
    })
}

fn load_arch(cfg: &TrainConfig) -> Result<Architecture> {
    Architecture::load(&cfg.arch).map_err(|e| Error::Config(format!("architecture `{}`: {e}", cfg.arch)))
}

/// Freshly initialized model for the configured architecture.
pub fn build_model<T: Scalar>(cfg: &TrainConfig, data: &Datasets<T>) -> Result<ModelGraph<T>> {
    let arch = load_arch(cfg)?;
    if arch.input != data.train.image_shape() {
        return Err(Error::Config(format!(
            "architecture expects {:?} inputs, data has {:?}",
            arch.input,
            data.train.image_shape()
        )));
    }
    let model = ModelGraph::from_architecture(&arch, &mut phase_rng(cfg.seed, Phase::Init))
        .map_err(|e| Error::Config(e.to_string()))?;
    if model.classes() != data.train.classes {
        return Err(Error::Config(format!(
            "classifier has {} outputs, data has {} classes",
            model.classes(),
            data.train.classes
        )));
    }
    Ok(model)
}

/// Optional dense training before masks are attached.
pub fn pretrain_stage<T: Scalar>(
    cfg: &TrainConfig,
    model: &mut ModelGraph<T>,
    data: &Datasets<T>,
) -> Result<Vec<EpochRecord>> {
    train_dense(
        model,
        data,
        cfg.pretrain_epochs,
        &cfg.pretrain_schedule(),
        sgd(cfg),
        Phase::Pretrain,
        false,
        &mut phase_rng(cfg.seed, Phase::Pretrain),
    )
    .map_err(|e| e.in_phase("pretrain"))
}

#[derive(Debug, Clone)]
pub struct MaskStage<T> {
    pub model: ModelGraph<T>,
    pub masks: MaskSet<T>,
    pub curves: Vec<EpochRecord>,
}

impl<T: Scalar> MaskStage<T> {
    /// Test accuracy of the masked dense model after the last mask epoch.
    pub fn dense_accuracy(&self) -> Option<f64> {
        self.curves.iter().rev().find(|r| r.phase == Phase::Mask).map(|r| r.test_accuracy)
    }
}

/// Attaches all-ones masks to every conv layer and trains weights and
/// masks jointly.
pub fn mask_stage<T: Scalar>(cfg: &TrainConfig, mut model: ModelGraph<T>, data: &Datasets<T>) -> Result<MaskStage<T>> {
    let rows = cfg.mask_variant.mask_rows(data.train.classes);
    let mut masks = MaskSet::for_model(&model, rows);
    let settings = MaskSettings {
        epochs: cfg.effective_mask_epochs(),
        lr: cfg.effective_mask_lr(),
        mu: cfg.mu,
        sigma: cfg.sigma,
        variant: cfg.mask_variant,
        sparsity: cfg.sparsity()?,
        freeze_masks: cfg.freeze_masks,
    };
    let curves = train_masks(
        &mut model,
        &mut masks,
        data,
        settings,
        sgd(cfg),
        &mut phase_rng(cfg.seed, Phase::Mask),
    )
    .map_err(|e| e.in_phase("mask"))?;
    Ok(MaskStage { model, masks, curves })
}

/// Scores channels from the trained masks (or uses `scores` when given) and
/// votes to the configured rate.
pub fn vote_stage<T: Scalar>(
    cfg: &TrainConfig,
    stage: &MaskStage<T>,
    scores: Option<&ChannelScoreTable>,
) -> Result<PruningPlan> {
    let run = || -> Result<PruningPlan> {
        let flops = FlopsModel::from_graph(&stage.model)?;
        let own;
        let scores = match scores {
            Some(s) => s,
            None => {
                own = channel_scores(&stage.masks.masks, cfg.score_kind)?;
                &own
            }
        };
        let value = cfg.mask_variant.label_free_value(cfg.mu, stage.masks.classes.max(1));
        global_vote(scores, &flops, cfg.alpha, value)
    };
    run().map_err(|e| e.in_phase("vote"))
}

/// Folds the masks into a copy of the model and removes the planned
/// channels.
pub fn prune_stage<T: Scalar>(cfg: &TrainConfig, stage: &MaskStage<T>, plan: &PruningPlan) -> Result<ModelGraph<T>> {
    let mut model = stage.model.clone();
    model.clear_caches();
    let value = cfg.mask_variant.label_free_value(cfg.mu, stage.masks.classes.max(1));
    fold_masks(&mut model, &stage.masks, value).map_err(|e| e.in_phase("fold"))?;
    let mut pruned = apply_plan(&model, plan).map_err(|e| e.in_phase("surgery"))?;
    smoke_test(&mut pruned).map_err(|e| e.in_phase("surgery"))?;
    Ok(pruned)
}

/// Fine-tunes the pruned model; returns its curves and final accuracy.
pub fn finetune_stage<T: Scalar>(
    cfg: &TrainConfig,
    model: &mut ModelGraph<T>,
    data: &Datasets<T>,
) -> Result<(Vec<EpochRecord>, f64)> {
    let curves = train_dense(
        model,
        data,
        cfg.finetune_epochs,
        &cfg.finetune_schedule(),
        sgd(cfg),
        Phase::Finetune,
        cfg.select_best,
        &mut phase_rng(cfg.seed, Phase::Finetune),
    )
    .map_err(|e| e.in_phase("finetune"))?;
    let acc = evaluate(model, &data.test, &data.pipeline, None, cfg.batch_size).map_err(|e| e.in_phase("evaluate"))?;
    Ok((curves, acc))
}

/// Runs every phase in order. With `out`, each phase's artifacts are
/// written there as soon as the phase completes.
pub fn run_pipeline<T: Scalar>(cfg: &TrainConfig, data: &Datasets<T>, out: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let dir = out.map(RunDir::create).transpose()?;
    if let Some(d) = &dir {
        d.save_config(cfg)?;
    }
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |phase: Phase, timings: &mut Vec<(Phase, f64)>| {
        timings.push((phase, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let mut model = build_model(cfg, data)?;
    let mut curves = pretrain_stage(cfg, &mut model, data)?;
    if let Some(d) = &dir {
        if cfg.pretrain_epochs > 0 {
            d.save_pretrain(&model, &curves)?;
        }
    }
    lap(Phase::Pretrain, &mut timings);

    let stage = mask_stage(cfg, model, data)?;
    if let Some(d) = &dir {
        d.save_mask_stage(&stage)?;
    }
    curves.extend(stage.curves.iter().cloned());
    lap(Phase::Mask, &mut timings);

    let plan = vote_stage(cfg, &stage, None)?;
    if let Some(d) = &dir {
        d.save_plan(&plan)?;
    }
    lap(Phase::Vote, &mut timings);

    let mut pruned = prune_stage(cfg, &stage, &plan)?;
    if let Some(d) = &dir {
        d.save_pruned(&pruned)?;
    }
    lap(Phase::Surgery, &mut timings);

    let (ft_curves, final_accuracy) = finetune_stage(cfg, &mut pruned, data)?;
    curves.extend(ft_curves.iter().cloned());
    lap(Phase::Finetune, &mut timings);

    let report = RunReport {
        dense_accuracy: stage.dense_accuracy().unwrap_or(f64::NAN),
        final_accuracy,
        plan,
        curves,
        timings,
    };
    if let Some(d) = &dir {
        d.save_finetune(&pruned, &ft_curves)?;
        d.save_report(&report)?;
    }
    Ok(report)
}

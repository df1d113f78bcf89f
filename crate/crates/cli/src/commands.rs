use std::fs;
use std::path::Path;
use std::time::Instant;

use whitebox::arch::Architecture;
use whitebox::harness::{
    build_model, evaluate, finetune_stage, load_data, mask_stage, pretrain_stage, prune_stage, run_pipeline,
    vote_stage, EvalMasks, Phase, ReportSummary, RunDir, TrainConfig,
};
use whitebox::prune::flops::human;
use whitebox::prune::{channel_scores, FlopsModel, PruningPlan};
use whitebox::{Error, Result};

use crate::{Checkpoint, Command, ExistingRun, NewRun};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Pipeline(args) => pipeline(args),
        Command::TrainMask(args) => train_mask(args),
        Command::Vote(args) => vote(args),
        Command::Fold(args) => fold(args),
        Command::Finetune(args) => finetune(args),
        Command::Eval { run, checkpoint } => eval(run, checkpoint),
        Command::Flops { arch, plan, csv } => flops(&arch, plan.as_deref(), csv),
        Command::Report { run, out } => report(&run, out.as_deref()),
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Parse { .. } | Error::UnreachableRate { .. } => 1,
        Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) => 2,
        _ => 3,
    }
}

/// `error kind=data code=2 phase=vote msg="missing artifact runs/a/plan.txt"`
pub fn error_line(e: &Error, code: u8) -> String {
    let kind = match code {
        1 => "config",
        2 => "data",
        _ => "training",
    };
    let phase = match e {
        Error::Phase { phase, .. } => phase,
        _ => "none",
    };
    let msg = e.root().to_string().replace(['\n', '\r'], " ").replace('"', "'");
    format!("error kind={kind} code={code} phase={phase} msg=\"{msg}\"")
}

fn new_config(args: &NewRun) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Saved config of a run with any overrides applied; `true` if it changed.
fn existing_config(args: &ExistingRun) -> Result<(RunDir, TrainConfig, bool)> {
    let dir = RunDir::open(&args.run)?;
    let mut cfg = dir.load_config()?;
    let before = cfg.to_text();
    cfg.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let changed = cfg.to_text() != before;
    Ok((dir, cfg, changed))
}

fn pipeline(args: NewRun) -> Result<()> {
    let cfg = new_config(&args)?;
    let data = load_data::<f32>(&cfg)?;
    let report = run_pipeline(&cfg, &data, Some(&args.out))?;
    println!("{}", report.summary_line());
    Ok(())
}

fn train_mask(args: NewRun) -> Result<()> {
    let cfg = new_config(&args)?;
    let data = load_data::<f32>(&cfg)?;
    let dir = RunDir::create(&args.out)?;
    dir.save_config(&cfg)?;
    let mut model = build_model(&cfg, &data)?;
    let curves = pretrain_stage(&cfg, &mut model, &data)?;
    if cfg.pretrain_epochs > 0 {
        dir.save_pretrain(&model, &curves)?;
    }
    let stage = mask_stage(&cfg, model, &data)?;
    dir.save_mask_stage(&stage)?;
    if let Some(last) = stage.curves.last() {
        println!(
            "mask epochs {} test_accuracy {} penalty {}",
            stage.curves.len(),
            last.test_accuracy,
            last.penalty.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn vote(args: ExistingRun) -> Result<()> {
    let (dir, cfg, changed) = existing_config(&args)?;
    let stage = dir.load_mask_stage::<f32>()?;
    let plan = vote_stage(&cfg, &stage, None)?;
    if changed {
        dir.save_config(&cfg)?;
    }
    dir.save_plan(&plan)?;
    println!(
        "achieved_rate {} flops {} -> {} kept {:?}",
        plan.achieved_rate,
        plan.baseline_flops,
        plan.pruned_flops,
        plan.kept_counts()
    );
    Ok(())
}

fn fold(args: ExistingRun) -> Result<()> {
    let (dir, cfg, changed) = existing_config(&args)?;
    let stage = dir.load_mask_stage::<f32>()?;
    let plan = dir.load_plan()?;
    let pruned = prune_stage(&cfg, &stage, &plan)?;
    if changed {
        dir.save_config(&cfg)?;
    }
    dir.save_pruned(&pruned)?;
    println!("pruned model kept {:?}", plan.kept_counts());
    Ok(())
}

fn finetune(args: ExistingRun) -> Result<()> {
    let (dir, cfg, changed) = existing_config(&args)?;
    let mut model = dir.load_pruned::<f32>()?;
    dir.load_plan()?;
    let data = load_data::<f32>(&cfg)?;
    let clock = Instant::now();
    let (curves, accuracy) = finetune_stage(&cfg, &mut model, &data)?;
    if changed {
        dir.save_config(&cfg)?;
    }
    dir.save_finetune(&model, &curves)?;
    let report = dir.assemble_report(accuracy, vec![(Phase::Finetune, clock.elapsed().as_secs_f64())])?;
    dir.save_report(&report)?;
    println!("{}", report.summary_line());
    Ok(())
}

fn eval(args: ExistingRun, checkpoint: Checkpoint) -> Result<()> {
    let (dir, cfg, _) = existing_config(&args)?;
    let (arch, ckpt) = match checkpoint {
        Checkpoint::Pretrain => ("arch_dense.txt", "ckpt_pretrain.bin"),
        Checkpoint::Mask => ("arch_dense.txt", "ckpt_mask.bin"),
        Checkpoint::Pruned => ("arch_pruned.txt", "ckpt_pruned.bin"),
        Checkpoint::Finetune => ("arch_pruned.txt", "ckpt_finetune.bin"),
    };
    let (mut model, masks) = dir.load_model::<f32>(arch, ckpt)?;
    let data = load_data::<f32>(&cfg)?;
    let masks = (!masks.masks.is_empty()).then(|| EvalMasks {
        value: cfg.mask_variant.label_free_value(cfg.mu, masks.classes.max(1)),
        masks: &masks,
    });
    let acc = evaluate(&mut model, &data.test, &data.pipeline, masks, cfg.batch_size)?;
    println!("accuracy {acc}");
    Ok(())
}

fn flops(arch: &str, plan: Option<&Path>, csv: bool) -> Result<()> {
    let arch = Architecture::load(arch)?;
    let model = FlopsModel::from_architecture(&arch)?;
    let kept = match plan {
        Some(p) => {
            let plan = PruningPlan::load(p)?;
            if plan.layers.iter().map(|l| l.layer_id).ne(model.units.iter().map(|u| u.layer_id)) {
                return Err(Error::Config(format!("plan {} does not match the architecture", p.display())));
            }
            plan.kept_counts()
        }
        None => model.full_counts(),
    };
    print!("{}", model.render_table(&kept, csv)?);
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn report(run: &Path, out: Option<&Path>) -> Result<()> {
    let dir = RunDir::open(run)?;
    let stage = dir.load_mask_stage::<f32>()?;
    let plan = dir.load_plan()?;
    let summary = match fs::read_to_string(dir.file("report.txt")) {
        Ok(text) => {
            let s = ReportSummary::parse(&text)?;
            whitebox::harness::summary_line(s.dense_accuracy, s.final_accuracy, &plan)
        }
        Err(_) => format!(
            "FLOPs {} \u{2192} {} ({:.2}% reduction)",
            human(plan.baseline_flops),
            human(plan.pruned_flops),
            100.0 * (1.0 - plan.pruned_flops as f64 / plan.baseline_flops as f64)
        ),
    };

    let out = out.unwrap_or(run);
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    let scores = channel_scores(&stage.masks.masks, plan.score_kind)?;
    for (mask, layer) in stage.masks.masks.iter().zip(&scores.layers) {
        let order = layer.ascending();
        write(&out.join(format!("heatmap_layer{}.csv", mask.layer_id)), &mask.to_csv(&order))?;
    }
    write(&out.join("rates.csv"), &plan.rates_csv())?;
    write(&out.join("summary.txt"), &format!("{summary}\n"))?;
    println!("{summary}");
    Ok(())
}

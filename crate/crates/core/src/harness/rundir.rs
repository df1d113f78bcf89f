//! Artifacts of a run, one file per phase output.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::Architecture;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::pipeline::MaskStage;
use crate::harness::report::{EpochRecord, RunReport};
use crate::harness::Phase;
use crate::mask::MaskSet;
use crate::model::ModelGraph;
use crate::prune::PruningPlan;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

pub const CONFIG: &str = "config.txt";
pub const ARCH_DENSE: &str = "arch_dense.txt";
pub const ARCH_PRUNED: &str = "arch_pruned.txt";
pub const CKPT_PRETRAIN: &str = "ckpt_pretrain.bin";
pub const CKPT_MASK: &str = "ckpt_mask.bin";
pub const CKPT_PRUNED: &str = "ckpt_pruned.bin";
pub const CKPT_FINETUNE: &str = "ckpt_finetune.bin";
pub const PLAN: &str = "plan.txt";
pub const RATES: &str = "rates.csv";
pub const REPORT: &str = "report.txt";
pub const CURVES: &str = "curves.csv";

fn curves_file(phase: Phase) -> String {
    format!("curves_{phase}.csv")
}

impl RunDir {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        std::fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunDir { path })
    }

    /// An existing run directory.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if !path.is_dir() {
            return Err(Error::Data(format!("run directory {} does not exist", path.display())));
        }
        Ok(RunDir { path })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Path of an artifact that must already exist.
    pub fn require(&self, name: &str) -> Result<PathBuf> {
        let p = self.file(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Data(format!("missing artifact {}", p.display())))
        }
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.file(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn read(&self, name: &str) -> Result<String> {
        let p = self.require(name)?;
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    }

    pub fn save_config(&self, cfg: &TrainConfig) -> Result<()> {
        self.write(CONFIG, &cfg.to_text())
    }

    pub fn load_config(&self) -> Result<TrainConfig> {
        TrainConfig::from_file(self.require(CONFIG)?)
    }

    fn save_model<T: Scalar>(&self, arch: &str, ckpt: &str, model: &ModelGraph<T>, extra: Vec<(String, crate::Tensor<T>)>) -> Result<()> {
        self.write(arch, &model.architecture()?.to_text())?;
        let mut tensors = model.named_tensors();
        tensors.extend(extra);
        checkpoint::save(self.file(ckpt), &tensors)
    }

    /// Rebuilds a model from an architecture file and a checkpoint.
    pub fn load_model<T: Scalar>(&self, arch: &str, ckpt: &str) -> Result<(ModelGraph<T>, MaskSet<T>)> {
        let arch = Architecture::from_file(self.require(arch)?)?;
        let tensors = checkpoint::load::<T>(self.require(ckpt)?)?;
        let mut model = ModelGraph::from_architecture(&arch, &mut ChaCha8Rng::seed_from_u64(0))?;
        model.load_named(&tensors)?;
        let masks = MaskSet::from_named(&tensors)?;
        Ok((model, masks))
    }

    fn save_curves(&self, phase: Phase, curves: &[EpochRecord]) -> Result<()> {
        self.write(&curves_file(phase), &EpochRecord::csv(curves))
    }

    /// Curves of one phase; empty if the phase left none.
    pub fn load_curves(&self, phase: Phase) -> Result<Vec<EpochRecord>> {
        if !self.file(&curves_file(phase)).is_file() {
            return Ok(Vec::new());
        }
        EpochRecord::parse_csv(&self.read(&curves_file(phase))?)
    }

    pub fn save_pretrain<T: Scalar>(&self, model: &ModelGraph<T>, curves: &[EpochRecord]) -> Result<()> {
        self.save_model(ARCH_DENSE, CKPT_PRETRAIN, model, Vec::new())?;
        self.save_curves(Phase::Pretrain, curves)
    }

    pub fn load_pretrain<T: Scalar>(&self) -> Result<ModelGraph<T>> {
        Ok(self.load_model(ARCH_DENSE, CKPT_PRETRAIN)?.0)
    }

    pub fn save_mask_stage<T: Scalar>(&self, stage: &MaskStage<T>) -> Result<()> {
        self.save_model(ARCH_DENSE, CKPT_MASK, &stage.model, stage.masks.named_tensors())?;
        self.save_curves(Phase::Mask, &stage.curves)
    }

    pub fn load_mask_stage<T: Scalar>(&self) -> Result<MaskStage<T>> {
        let (model, masks) = self.load_model(ARCH_DENSE, CKPT_MASK)?;
        if masks.masks.is_empty() {
            return Err(Error::Checkpoint(format!("{CKPT_MASK} holds no masks")));
        }
        Ok(MaskStage {
            model,
            masks,
            curves: self.load_curves(Phase::Mask)?,
        })
    }

    pub fn save_plan(&self, plan: &PruningPlan) -> Result<()> {
        plan.save(self.file(PLAN))?;
        self.write(RATES, &plan.rates_csv())
    }

    pub fn load_plan(&self) -> Result<PruningPlan> {
        PruningPlan::load(self.require(PLAN)?)
    }

    pub fn save_pruned<T: Scalar>(&self, model: &ModelGraph<T>) -> Result<()> {
        self.save_model(ARCH_PRUNED, CKPT_PRUNED, model, Vec::new())
    }

    pub fn load_pruned<T: Scalar>(&self) -> Result<ModelGraph<T>> {
        Ok(self.load_model(ARCH_PRUNED, CKPT_PRUNED)?.0)
    }

    pub fn save_finetune<T: Scalar>(&self, model: &ModelGraph<T>, curves: &[EpochRecord]) -> Result<()> {
        self.save_model(ARCH_PRUNED, CKPT_FINETUNE, model, Vec::new())?;
        self.save_curves(Phase::Finetune, curves)
    }

    pub fn load_finetune<T: Scalar>(&self) -> Result<ModelGraph<T>> {
        Ok(self.load_model(ARCH_PRUNED, CKPT_FINETUNE)?.0)
    }

    pub fn save_report(&self, report: &RunReport) -> Result<()> {
        self.write(REPORT, &report.to_text())?;
        self.write(CURVES, &report.curves_csv())
    }

    /// Report rebuilt from the saved plan and per-phase curves.
    pub fn assemble_report(&self, final_accuracy: f64, timings: Vec<(Phase, f64)>) -> Result<RunReport> {
        let mut curves = self.load_curves(Phase::Pretrain)?;
        let mask = self.load_curves(Phase::Mask)?;
        let dense_accuracy = mask.last().map_or(f64::NAN, |r| r.test_accuracy);
        curves.extend(mask);
        curves.extend(self.load_curves(Phase::Finetune)?);
        Ok(RunReport {
            curves,
            dense_accuracy,
            final_accuracy,
            plan: self.load_plan()?,
            timings,
        })
    }
}

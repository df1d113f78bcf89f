//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::{MaskVariant, NormKind, SparsityConfig};
use crate::optim::StepSchedule;
use crate::prune::ScoreKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synth,
    Cifar10,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synth" => Ok(DatasetKind::Synth),
            "cifar10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Synth => "synth",
            DatasetKind::Cifar10 => "cifar10",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Bundled architecture name (`toy4`) or path to a description file.
    pub arch: String,
    pub dataset: DatasetKind,
    /// CIFAR-10 directory; falls back to `WHITEBOX_DATA_DIR`.
    pub data_dir: Option<String>,
    pub data_seed: u64,
    pub synth_classes: usize,
    pub synth_train_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_noise: f64,
    pub synth_jitter: f64,
    pub synth_distractors: usize,

    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
    pub norm_kind: NormKind,
    pub mask_variant: MaskVariant,
    /// `None` means 10% of the fine-tuning epochs, at least one.
    pub mask_epochs: Option<usize>,
    /// `None` means `lr`.
    pub mask_lr: Option<f64>,
    /// Dense training before the mask phase.
    pub pretrain_epochs: usize,
    /// `None` means `lr`.
    pub pretrain_lr: Option<f64>,
    pub freeze_masks: bool,
    pub pretrain_milestones: Vec<usize>,
    pub finetune_epochs: usize,
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub seed: u64,
    pub score_kind: ScoreKind,
    pub augment: bool,
    pub pad_crop: usize,
    pub hflip_prob: f64,
    /// Keep the fine-tuning epoch with the best test accuracy instead of the
    /// last one.
    pub select_best: bool,
}

impl Default for TrainConfig {
    /// CIFAR-10 settings: 300 fine-tuning epochs with the rate divided by 10
    /// at epochs 150 and 225.
    fn default() -> Self {
        TrainConfig {
            arch: "toy4".into(),
            dataset: DatasetKind::Cifar10,
            data_dir: None,
            data_seed: 0,
            synth_classes: 10,
            synth_train_per_class: 500,
            synth_test_per_class: 100,
            synth_noise: 0.15,
            synth_jitter: 1.5,
            synth_distractors: 1,
            lambda: 1e-2,
            mu: 0.5,
            sigma: 1.0,
            norm_kind: NormKind::L2Group,
            mask_variant: MaskVariant::ClassWise,
            mask_epochs: None,
            mask_lr: None,
            pretrain_epochs: 0,
            pretrain_lr: None,
            freeze_masks: false,
            pretrain_milestones: Vec::new(),
            finetune_epochs: 300,
            lr: 0.1,
            milestones: vec![150, 225],
            lr_factor: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 256,
            alpha: 0.5,
            seed: 0,
            score_kind: ScoreKind::AbsSum,
            augment: true,
            pad_crop: 4,
            hflip_prob: 0.5,
            select_best: true,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "arch" => self.arch = v.to_string(),
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| v.to_string()),
            "data_seed" => self.data_seed = parse_value(key, v)?,
            "synth_classes" => self.synth_classes = parse_value(key, v)?,
            "synth_train_per_class" => self.synth_train_per_class = parse_value(key, v)?,
            "synth_test_per_class" => self.synth_test_per_class = parse_value(key, v)?,
            "synth_noise" => self.synth_noise = parse_value(key, v)?,
            "synth_jitter" => self.synth_jitter = parse_value(key, v)?,
            "synth_distractors" => self.synth_distractors = parse_value(key, v)?,
            "lambda" => self.lambda = parse_value(key, v)?,
            "mu" => self.mu = parse_value(key, v)?,
            "sigma" => self.sigma = parse_value(key, v)?,
            "norm_kind" => self.norm_kind = v.parse()?,
            "mask_variant" => self.mask_variant = v.parse()?,
            "mask_epochs" => {
                self.mask_epochs = if v == "auto" { None } else { Some(parse_value(key, v)?) }
            }
            "mask_lr" => self.mask_lr = if v == "auto" { None } else { Some(parse_value(key, v)?) },
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, v)?,
            "pretrain_lr" => {
                self.pretrain_lr = if v == "auto" { None } else { Some(parse_value(key, v)?) }
            }
            "freeze_masks" => self.freeze_masks = parse_value(key, v)?,
            "pretrain_milestones" => self.pretrain_milestones = parse_list(key, v)?,
            "finetune_epochs" => self.finetune_epochs = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "milestones" => self.milestones = parse_list(key, v)?,
            "lr_factor" => self.lr_factor = parse_value(key, v)?,
            "momentum" => self.momentum = parse_value(key, v)?,
            "weight_decay" => self.weight_decay = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "alpha" => self.alpha = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "score_kind" => self.score_kind = v.parse()?,
            "augment" => self.augment = parse_value(key, v)?,
            "pad_crop" => self.pad_crop = parse_value(key, v)?,
            "hflip_prob" => self.hflip_prob = parse_value(key, v)?,
            "select_best" => self.select_best = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of the defaults. Blank lines and `#`
    /// comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_prefix(e))))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(e))))
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn effective_mask_epochs(&self) -> usize {
        self.mask_epochs
            .unwrap_or_else(|| ((self.finetune_epochs as f64 * 0.1).round() as usize).max(1))
    }

    pub fn effective_mask_lr(&self) -> f64 {
        self.mask_lr.unwrap_or(self.lr)
    }

    pub fn sparsity(&self) -> Result<SparsityConfig> {
        SparsityConfig::new(self.lambda, self.norm_kind)
    }

    pub fn finetune_schedule(&self) -> StepSchedule {
        StepSchedule {
            initial: self.lr,
            milestones: self.milestones.clone(),
            factor: self.lr_factor,
        }
    }

    pub fn pretrain_schedule(&self) -> StepSchedule {
        StepSchedule {
            initial: self.pretrain_lr.unwrap_or(self.lr),
            milestones: self.pretrain_milestones.clone(),
            factor: self.lr_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.effective_mask_epochs() == 0 {
            return fail("mask_epochs must be at least 1".into());
        }
        for (name, list, limit) in [
            ("milestones", &self.milestones, self.finetune_epochs),
            ("pretrain_milestones", &self.pretrain_milestones, self.pretrain_epochs),
        ] {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return fail(format!("{name} must be strictly increasing"));
            }
            if list.iter().any(|&m| m >= limit) {
                return fail(format!("{name} must lie below {limit}"));
            }
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        self.sparsity()?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite() && self.mu.is_finite()) {
            return fail(format!("need finite mu and sigma >= 0, got mu={} sigma={}", self.mu, self.sigma));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        for (name, v) in [
            ("lr", self.lr),
            ("mask_lr", self.effective_mask_lr()),
            ("pretrain_lr", self.pretrain_schedule().initial),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lr_factor", self.lr_factor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return fail(format!("hflip_prob must lie in [0, 1], got {}", self.hflip_prob));
        }
        if self.dataset == DatasetKind::Synth && self.synth_classes < 2 {
            return fail("synth_classes must be at least 2".into());
        }
        if !(self.synth_noise >= 0.0 && self.synth_jitter >= 0.0) {
            return fail("synthetic noise and jitter must be >= 0".into());
        }
        Ok(())
    }

    /// Every key, one per line, in a form [`TrainConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("arch", self.arch.clone());
        kv("dataset", self.dataset.to_string());
        kv("data_dir", self.data_dir.clone().unwrap_or_default());
        kv("data_seed", self.data_seed.to_string());
        kv("synth_classes", self.synth_classes.to_string());
        kv("synth_train_per_class", self.synth_train_per_class.to_string());
        kv("synth_test_per_class", self.synth_test_per_class.to_string());
        kv("synth_noise", self.synth_noise.to_string());
        kv("synth_jitter", self.synth_jitter.to_string());
        kv("synth_distractors", self.synth_distractors.to_string());
        kv("lambda", self.lambda.to_string());
        kv("mu", self.mu.to_string());
        kv("sigma", self.sigma.to_string());
        kv("norm_kind", self.norm_kind.to_string());
        kv("mask_variant", self.mask_variant.to_string());
        kv("mask_epochs", opt(self.mask_epochs.map(|v| v.to_string())));
        kv("mask_lr", opt(self.mask_lr.map(|v| v.to_string())));
        kv("freeze_masks", self.freeze_masks.to_string());
        kv("pretrain_epochs", self.pretrain_epochs.to_string());
        kv("pretrain_lr", opt(self.pretrain_lr.map(|v| v.to_string())));
        kv("pretrain_milestones", join(&self.pretrain_milestones));
        kv("finetune_epochs", self.finetune_epochs.to_string());
        kv("lr", self.lr.to_string());
        kv("milestones", join(&self.milestones));
        kv("lr_factor", self.lr_factor.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("alpha", self.alpha.to_string());
        kv("seed", self.seed.to_string());
        kv("score_kind", self.score_kind.to_string());
        kv("augment", self.augment.to_string());
        kv("pad_crop", self.pad_crop.to_string());
        kv("hflip_prob", self.hflip_prob.to_string());
        kv("select_best", self.select_best.to_string());
        s
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

//! The three-phase pipeline: mask training, global voting with fold and
//! surgery, then fine-tuning, with evaluation, reports and checkpoints.

mod config;
mod pipeline;
mod report;
mod rundir;
mod train;

pub use config::{DatasetKind, TrainConfig};
pub use pipeline::{
    build_model, finetune_stage, load_data, mask_stage, phase_rng, pretrain_stage, prune_stage,
    run_pipeline, vote_stage, MaskStage, DATA_DIR_ENV,
};
pub use report::{summary_line, EpochRecord, ReportSummary, RunReport};
pub use rundir::RunDir;
pub use train::{
    accuracy, argmax_rows, evaluate, predict, shuffled_batches, train_dense, train_masks, Datasets,
    EvalMasks, MaskSettings, SgdSettings,
};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Init,
    Pretrain,
    Mask,
    Vote,
    Fold,
    Surgery,
    Finetune,
    Evaluate,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::Init,
        Phase::Pretrain,
        Phase::Mask,
        Phase::Vote,
        Phase::Fold,
        Phase::Surgery,
        Phase::Finetune,
        Phase::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Pretrain => "pretrain",
            Phase::Mask => "mask",
            Phase::Vote => "vote",
            Phase::Fold => "fold",
            Phase::Surgery => "surgery",
            Phase::Finetune => "finetune",
            Phase::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown phase `{s}`")))
    }
}

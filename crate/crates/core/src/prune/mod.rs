//! Channel scoring, budgeted global voting, mask folding and surgery.

pub mod flops;
pub mod fold;
pub mod plan;
pub mod score;
pub mod surgery;
pub mod vote;

pub use flops::{model_flops, FlopsModel};
pub use fold::{fold_mask, fold_masks};
pub use plan::{LayerPlan, PruningPlan};
pub use score::{channel_scores, ChannelScoreTable, LayerScores, ScoreKind};
pub use surgery::{apply_plan, smoke_test};
pub use vote::global_vote;

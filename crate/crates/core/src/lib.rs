//! Structured channel pruning driven by class-wise channel masks.
//!
//! A model is trained with one learnable mask per conv layer whose rows are
//! indexed by class. Channels whose mask columns carry little weight across
//! all classes are removed by a global vote under a FLOPs budget, the masks
//! are folded into the surviving weights, and the slimmer network is
//! fine-tuned.

pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod harness;
pub mod mask;
pub mod model;
pub mod ops;
pub mod optim;
pub mod prune;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ModelGraph32 = model::ModelGraph<f32>;
pub type ModelGraph64 = model::ModelGraph<f64>;
pub type MaskSet32 = mask::MaskSet<f32>;
pub type MaskSet64 = mask::MaskSet<f64>;

//! Minimal f64 neural-network engine with hand-derived backward passes.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod sgd;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, Differentiable, GradCheckOptions, GradCheckReport};
pub use layers::{ConvParams, LrnParams, Mode, PoolParams};
pub use loss::{cross_entropy_loss, softmax_cross_entropy, softmax_prob};
pub use sgd::{sgd_step, SgdConfig};
pub use tensor::{LayerState, Tensor};

//! Synthetic layered scenes and a per-pixel kernel optimizer.
//!
//! There is no network here: every pixel owns its kernel and blend logits,
//! which isolates the t-kernel operator and its gradients from any model.

mod eval;
mod scene;
mod train;

pub use eval::{eval_toy, ToyEval};
pub use scene::{border_margin, make_scene, Layer, SceneKind, SceneOracle, SCENE_CHANNELS};
pub use train::{resume, softmax_channels, train_toy, Optimizer, TrainConfig, TrainRecord, TrainState};

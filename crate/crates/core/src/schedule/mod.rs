//! Learning-rate schedules and freeze plans.

mod lr;
mod plan;

pub use lr::{cosine_lr, layerwise_lr, CosineScheduleParams, LayerwiseScheduleParams, FINAL_RATIO};
pub use plan::{apply_plan, FreezePlan, Rule, Stage, TensorLr};

//! Pre-training stages, fine-tuning, the ablation matrix and evaluation.

mod ablation;
mod batches;
mod eval;
mod metrics;
mod stage;

pub use ablation::{
    ablation_csv, ablation_table, initial_model, run_ablation, run_config, AblationConfig, AblationRow, AblationSetup,
    PretrainSchedule,
};
pub use batches::BatchStream;
pub use eval::{
    continuation_logprob, eval_preservation, eval_ranked, rank_outcome, text_perplexity, Preservation, RankedAccuracy,
};
pub use metrics::{EpochEvent, MetricRow, MetricsLog};
pub use stage::{pretrain_text_base, run_stage, StageData, TrainOptions};

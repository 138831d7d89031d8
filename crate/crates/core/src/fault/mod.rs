//! Failure modeling and recovery: Weibull failure times, checkpoint cost
//! models with an interval optimizer, and the on-disk checkpoint format.

mod checkpoint;
mod cost;
mod weibull;

pub use checkpoint::{
    checkpoint_file_name, load_checkpoint, recover_without_checkpoint, save_checkpoint,
    Checkpoint, CheckpointStore, StoredCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use cost::{
    checkpoint_cost, checkpoint_cost_amortized, checkpoint_cost_paper,
    optimal_checkpoint_interval, CheckpointPolicy, CostModel, CostModelParams, IntervalSolution,
};
pub use weibull::{
    fit_weibull, sample_failure_time, sample_failure_time_from, weibull_failure_prob,
    weibull_quantile, WeibullParams, MIN_FIT_SAMPLES,
};

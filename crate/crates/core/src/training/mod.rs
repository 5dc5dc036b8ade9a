//! Adadelta optimization, length-bucketed batching, checkpoints and
//! dev-accuracy model selection.

mod adadelta;
mod batching;
mod checkpoint;
mod config;
mod trainer;

pub use adadelta::{adadelta_update, apply_step, OptimizerState, StepReport};
pub use batching::{batch_plan, derive_seed, make_batches, pair_examples, sequential_batches};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use trainer::{evaluate, run_summary, train, EpochOutcome, EpochRecord, EvalStats, StepRecord, Trainer, TrainOutcome, TrainingState};

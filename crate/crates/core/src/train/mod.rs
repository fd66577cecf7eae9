//! Loss, optimizer, modality dropout, the freeze/unfreeze schedule and
//! in-memory checkpoints.

mod adamw;
mod checkpoint;
mod loss;
mod trainer;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use checkpoint::{Checkpoint, NamedTensor, RngState};
pub use loss::{batch_loss, masked_cross_entropy};
pub use trainer::{
    DropGranularity, EpochSummary, FitError, ModalityDropout, Phase, StepStats, TrainConfig,
    TrainObserver, Trainer,
};

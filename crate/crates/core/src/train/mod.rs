//! Loss, optimizer, learning-rate schedule, and the training phases.

mod config;
mod loss;
mod optim;
mod report;
mod trainer;

pub use config::{step_decay, TrainConfig};
pub use loss::cross_entropy;
pub use optim::{AdamW, AdamWConfig, Moments};
pub use report::{window_means_non_increasing, EpochRecord, TrainReport};
pub use trainer::{finetune, resume, stack_batch, train, TrainOutcome};

//! Training strategies, composite losses, the epoch loop and early stopping.

mod early_stop;
mod history;
mod loss;
mod plan;
mod trainer;

pub use early_stop::{replay as replay_early_stop, Decision, EarlyStopPolicy, EarlyStopper, StopReason};
pub use history::{EpochRecord, PhaseOutcome, TrainingHistory};
pub use loss::{composite_loss, tied_penalty, CompositeLoss, LossBreakdown, TiedDistance, TiedPenalty};
pub use plan::{LossWeights, Strategy, TrainingPlan};
pub use trainer::{
    fit, fit_observed, train_speech_encoder, train_step_by_step, train_step_by_step_observed, PathMode, PhaseSettings,
    StepPath, StepRecord, Trainer, TrainingData,
};

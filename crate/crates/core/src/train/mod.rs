//! Optimization, checkpoints, evaluation and inference drivers.

pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod evaluate;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, verify_params, Checkpoint};
pub use config::{ExperimentConfig, TrainConfig, SEED_ENV};
pub use evaluate::{evaluate_checkpoint, evaluate_manifest, score_utterance, separate_file, EvalReport};
pub use optim::{adam_step, clip_grad_norm, lr_after, lr_schedule, AdamConfig, AdamState};
pub use trainer::{EpochMetrics, RunSummary, StepStats, TrainState, Trainer};

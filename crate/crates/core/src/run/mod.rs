//! Experiment plumbing: configuration, seeded training with checkpoints,
//! evaluation and the ablation matrix.

mod ablate;
mod checkpoint;
mod config;
mod eval;
mod seeds;
mod train;

pub use ablate::{
    ablate, apply_variant, higher_is_better, welch_t_test, AblationReport, SeedRun, SummaryRow,
    VariantRuns, BASELINE, VARIANTS,
};
pub use checkpoint::{Checkpoint, SavedTensor};
pub use config::{DataConfig, RunConfig, Splits, TrainConfig};
pub use eval::{core_nrmse, evaluate, predict_dataset};
pub use seeds::{component_rng, component_seed, Component};
pub use train::{
    train, LogRecord, Resume, TrainOutcome, BEST_CHECKPOINT, CONFIG_FILE, LAST_CHECKPOINT, LOG_FILE,
};

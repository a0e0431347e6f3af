//! Configuration, training loop, checkpoints and experiment runners.

mod checkpoint;
mod config;
mod experiments;
mod train;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{RunConfig, CONFIG_VERSION};
pub use experiments::{
    cmd_compare, cmd_eval, cmd_generate, cmd_ground_experiment, cmd_recurrence_sweep, cmd_train,
    evaluate_model, headline, median, metric_rows, parse_scene_spec, predict_all, write_sweep_csv,
    Comparison, ComparisonRow, GroundSource, GroundingResult, METRIC_NAMES,
};
pub use train::{
    record_loss, write_loss_curve, EpochLog, Example, Prepared, Trainer, TRAIN_ASSIGN,
};

//! File formats, datasets, toy data, configuration and training drivers.

mod artifacts;
mod config;
mod dataset;
mod evaluate;
mod format;
mod toy;
mod train;

pub use artifacts::{load_denoiser, load_evaluator, save_denoiser, save_evaluator};
pub use config::{
    ComposeConfig, MetricsConfig, RunConfig, ScheduleConfig, TextBackend, TextConfig, TrainConfig,
};
pub use dataset::{DatasetManifest, ManifestEntry, NormStats, Split, MANIFEST_FILE, STD_FLOOR};
pub use evaluate::{evaluate_generation, EvalMetrics};
pub use format::{
    load_checkpoint, load_motion, save_checkpoint, save_motion, CheckpointManifest, TensorEntry, LAYOUT_FLAT,
    MOTION_MAGIC, MOTION_VERSION,
};
pub use toy::{assign_splits, generate_toy_dataset, generate_toy_samples, ToyClass, ToyConfig};
pub use train::{
    prepare_eval_items, prepare_train_items, skeleton_for, train_denoiser, RunReport, TrainRun, TrainSummary,
};

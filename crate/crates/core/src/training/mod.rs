//! Optimization, synthetic data, training loop and evaluation metrics.

pub mod adam;
pub mod eval;
pub mod metrics;
pub mod synth;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use eval::{evaluate, mean_losses, predict, PredictionRecord, TOP_N};
pub use metrics::{iou, recall_at, MetricsReport};
pub use synth::{synth_dataset, Preset, SyntheticSpec};
pub use trainer::{batch_gradients, train_model, StepLog, TrainOptions, TrainRun};

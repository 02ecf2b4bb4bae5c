//! File formats and configuration.

pub mod annotations;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod features;

pub use annotations::{load_annotations, AnnotationRecord};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{DataConfig, TrainConfig};
pub use dataset::{load_dataset, write_dataset};
pub use embeddings::TokenEmbedder;
pub use features::{load_features, save_features};

//! Coarse-to-fine adversarial training with identity conditioning.

pub mod config;
pub mod engine;
pub mod losses;

pub use config::{CropSetting, TrainConfig};
pub use engine::{
    compute_sigma, continue_training, init_model, make_batch, train_all, train_scale, BatchItem, IterationReport,
    ScaleReport, ScaleTrainer, TrainObserver,
};
pub use losses::{Embedding, LinearProjection, MeanPixel};

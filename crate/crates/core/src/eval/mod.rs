//! Metrics, memory profiling and the training-set analyses.

pub mod experiments;
pub mod features;
pub mod frechet;
pub mod metrics;
pub mod niqe;
pub mod textures;

pub use experiments::{
    capacity_experiment, cropping_experiment, evaluate, memory_curve, memory_profile, panorama_experiment,
    samples_for, CapacityRow, Evaluation, MemoryPoint, PanoramaConfig, PanoramaPoint, PanoramaResult,
};
pub use features::{ConvExtractor, FeatureExtractor, StubExtractor};
pub use frechet::{frechet_distance, FeatureStats};
pub use metrics::{diversity, sifid, spearman, MeanStd, MetricReport};
pub use niqe::{niqe, NiqeModel};

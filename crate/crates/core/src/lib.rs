//! Identity-conditioned multi-scale patch GAN.
//!
//! One generator/critic pair per pyramid level is trained on K images at
//! once; every generator is modulated by a per-pixel identity map on the
//! K-simplex. Changing that map at inference time samples, melds, morphs,
//! fuses and edits the training images.

pub mod apps;
pub mod autograd;
pub mod bundle;
pub mod error;
pub mod eval;
pub mod identity;
pub mod memory;
pub mod model;
pub mod networks;
pub mod noise;
pub mod optim;
pub mod pyramid;
pub mod render;
pub mod tensor;
pub mod train;

pub use bundle::{load_bundle, save_bundle, Bundle, Manifest};
pub use error::{Error, Result};
pub use identity::{BinaryMask, IdentityMap, IdentitySchedule};
pub use model::Model;
pub use pyramid::{CropWindow, ImageBuffer, ScalePlan};
pub use render::{IdSource, NoiseMode};
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainObserver};

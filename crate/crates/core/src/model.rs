//! A multi-scale model: one generator/critic pair per pyramid level plus the
//! plan, noise amplitudes and training images needed to run it.

use crate::error::{Error, Result};
use crate::networks::{ChannelSchedule, DiscriminatorSpec, GeneratorSpec, ScaleArch};
use crate::noise::{purpose, stream_id, substream, NoiseField};
use crate::optim::AdamState;
use crate::pyramid::{ImageBuffer, ScalePlan};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleModel {
    pub arch: ScaleArch,
    pub generator: Vec<Tensor>,
    pub discriminator: Vec<Tensor>,
    pub gen_opt: AdamState,
    pub disc_opt: AdamState,
    pub iterations: usize,
    pub trained: bool,
}

impl ScaleModel {
    pub fn init(arch: ScaleArch, seed: u64, level: usize) -> Self {
        let mut rg = substream(seed, &[purpose::INIT, level as u64, 0]);
        let mut rd = substream(seed, &[purpose::INIT, level as u64, 1]);
        let generator = arch.generator.init(&mut rg);
        let discriminator = arch.discriminator.init(&mut rd);
        ScaleModel {
            gen_opt: AdamState::new(&arch.generator.shapes()),
            disc_opt: AdamState::new(&arch.discriminator.shapes()),
            arch,
            generator,
            discriminator,
            iterations: 0,
            trained: false,
        }
    }
}

/// Architecture knobs that decide per-level widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub schedule: ChannelSchedule,
    /// Hidden width of the SPADE units; `None` uses the level's width.
    pub spade_hidden: Option<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            schedule: ChannelSchedule::default(),
            spade_hidden: None,
        }
    }
}

impl ArchConfig {
    pub fn arch_for(&self, plan: &ScalePlan, num_ids: usize, level: usize) -> ScaleArch {
        let c = self.schedule.channels_for_scale(plan.coarsest() - level);
        ScaleArch {
            generator: GeneratorSpec {
                channels: c,
                num_ids,
                spade_hidden: self.spade_hidden.unwrap_or(c),
            },
            discriminator: DiscriminatorSpec { channels: c },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub plan: ScalePlan,
    pub num_ids: usize,
    pub seed: u64,
    pub sigma_base: f64,
    pub c_rec: f64,
    /// Generation-noise amplitude per level (index 0 = finest).
    pub sigmas: Vec<f64>,
    pub scales: Vec<ScaleModel>,
    /// Training images at the plan's finest size, indexed by identity.
    pub images: Vec<ImageBuffer>,
}

impl Model {
    pub fn new(
        plan: ScalePlan,
        images: Vec<ImageBuffer>,
        arch: ArchConfig,
        seed: u64,
        sigma_base: f64,
        c_rec: f64,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidInput("at least one training image is required".into()));
        }
        if let Some(img) = images.iter().find(|i| i.size() != plan.full_size()) {
            return Err(Error::InvalidInput(format!(
                "training image {:?} does not match the plan size {:?}",
                img.size(),
                plan.full_size()
            )));
        }
        let k = images.len();
        let scales = (0..plan.num_scales())
            .map(|l| ScaleModel::init(arch.arch_for(&plan, k, l), seed, l))
            .collect();
        Ok(Model {
            sigmas: vec![sigma_base; plan.num_scales()],
            plan,
            num_ids: k,
            seed,
            sigma_base,
            c_rec,
            scales,
            images,
        })
    }

    pub fn num_scales(&self) -> usize {
        self.plan.num_scales()
    }

    pub fn coarsest(&self) -> usize {
        self.plan.coarsest()
    }

    /// Standard deviation of the fixed reconstruction noise at `level`.
    pub fn rec_amplitude(&self, level: usize) -> f64 {
        if level == self.coarsest() {
            self.sigmas[level]
        } else {
            self.c_rec * self.sigmas[level]
        }
    }

    /// The reconstruction noise at `level`: one draw, shared by all identities.
    pub fn rec_field(&self, level: usize) -> NoiseField {
        NoiseField::new(
            self.seed,
            stream_id(&[purpose::RECONSTRUCTION, level as u64]),
            self.plan.size(level),
            self.rec_amplitude(level),
        )
    }

    pub fn is_trained(&self) -> bool {
        self.scales.iter().all(|s| s.trained)
    }

    pub fn check_id(&self, k: usize) -> Result<()> {
        if k >= self.num_ids {
            return Err(Error::InvalidInput(format!(
                "identity {k} out of range for K = {}",
                self.num_ids
            )));
        }
        Ok(())
    }
}

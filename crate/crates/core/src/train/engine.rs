use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad, no_grad, Var};
use crate::error::{Error, Result};
use crate::memory;
use crate::model::Model;
use crate::networks::{as_vars, discriminator_forward, generator_forward, HALO};
use crate::noise::{purpose, stream_id, substream, NoiseField};
use crate::optim::Adam;
use crate::pyramid::{build_scale_plan, resample, resample_tensor, CropWindow, ImageBuffer, Kernel, ScalePlan};
use crate::render::{IdSource, NoiseMode, RenderJob};
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::losses::{
    dirichlet_ones, generator_adv_loss, reconstruction_loss, semantic_blend_loss, wgan_gp_d_loss, Embedding,
};

/// Scalars of one training iteration (the last D and G step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub scale: usize,
    pub iteration: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_rec: f64,
    pub g_sem: f64,
    pub gp: f64,
    /// Peak bytes allocated during the iteration; 0 unless the counting
    /// allocator is installed.
    pub peak_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub scale: usize,
    pub sigma: f64,
    pub iterations: Vec<IterationReport>,
}

/// One sample of a training batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub id: usize,
    pub window: CropWindow,
}

/// K full-image samples, or 2K random crops when the level is cropped.
pub fn make_batch(level: usize, plan: &ScalePlan, num_ids: usize, rng: &mut impl Rng) -> Vec<BatchItem> {
    let size = plan.size(level);
    let items: Vec<BatchItem> = match plan.crop(level) {
        None => (0..num_ids)
            .map(|id| BatchItem {
                id,
                window: CropWindow::full(size, HALO),
            })
            .collect(),
        Some((ch, cw)) => (0..2 * num_ids)
            .map(|i| BatchItem {
                id: i % num_ids,
                window: CropWindow {
                    top: rng.random_range(0..=size.0 - ch),
                    left: rng.random_range(0..=size.1 - cw),
                    height: ch,
                    width: cw,
                    halo: HALO,
                },
            })
            .collect(),
    };
    assert!(
        (0..num_ids).all(|k| items.iter().any(|b| b.id == k)),
        "every identity must appear in every batch"
    );
    items
}

fn root_mean_square(a: &Tensor, b: &Tensor) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}

/// Generation-noise amplitude for `level`: σ_base at the coarsest level, else
/// σ_base times the mean over identities of the RMSE between the upsampled
/// coarser reconstruction and the level's image.
pub fn compute_sigma(model: &Model, level: usize) -> Result<f64> {
    if level == model.coarsest() {
        return Ok(model.sigma_base);
    }
    let size = model.plan.size(level);
    let mut total = 0.0;
    for k in 0..model.num_ids {
        let job = RenderJob::new(model, model.plan.sizes.clone(), IdSource::Constant(k), NoiseMode::Reconstruction, model.seed)?;
        let rec = job.render_level(level + 1)?;
        let up = resample_tensor(&rec, size, Kernel::Bicubic);
        let target = resample(&model.images[k], size)?;
        total += root_mean_square(&up, target.tensor());
    }
    Ok(model.sigma_base * total / model.num_ids as f64)
}

pub trait TrainObserver {
    fn iteration(&mut self, _report: &IterationReport) {}
    fn scale_done(&mut self, _model: &Model, _report: &ScaleReport) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

struct Prepared {
    prev_fake: Tensor,
    res_fake: Tensor,
    ids: Tensor,
    rec_input: Tensor,
    rec_res: Tensor,
    real: Tensor,
}

/// Trains one level with all coarser levels frozen.
pub struct ScaleTrainer<'a> {
    model: &'a mut Model,
    level: usize,
    cfg: TrainConfig,
    embedding: Option<&'a dyn Embedding>,
    reals: Vec<Tensor>,
    rec_cache: Option<Vec<(Tensor, Tensor)>>,
    report: ScaleReport,
    iteration: usize,
}

fn grown(r: Range<usize>) -> Range<isize> {
    r.start as isize - HALO as isize..r.end as isize + HALO as isize
}

fn check_finite(level: usize, iteration: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            scale: level,
            iteration,
            what: format!("{what} = {v}"),
        })
    }
}

fn finite_grads(level: usize, iteration: usize, what: &str, g: &[Var]) -> Result<Vec<Tensor>> {
    if g.iter().all(|v| v.value().all_finite()) {
        Ok(g.iter().map(|v| v.value().clone()).collect())
    } else {
        Err(Error::Diverged {
            scale: level,
            iteration,
            what: format!("non-finite {what} gradient"),
        })
    }
}

impl<'a> ScaleTrainer<'a> {
    pub fn new(
        model: &'a mut Model,
        level: usize,
        cfg: &TrainConfig,
        embedding: Option<&'a dyn Embedding>,
    ) -> Result<Self> {
        cfg.validate()?;
        if level >= model.num_scales() {
            return Err(Error::InvalidInput(format!("level {level} outside the plan")));
        }
        if let Some(l) = (level + 1..model.num_scales()).find(|&l| !model.scales[l].trained) {
            return Err(Error::InvalidInput(format!(
                "level {l} must be trained before level {level}"
            )));
        }
        if cfg.alpha_sem > 0.0 && embedding.is_none() {
            return Err(Error::Config(
                "alpha_sem > 0 needs an embedding for the semantic loss".into(),
            ));
        }
        model.sigmas[level] = compute_sigma(model, level)?;
        if cfg.warm_start && level < model.coarsest() && model.scales[level].iterations == 0 {
            let (fine, coarse) = model.scales.split_at_mut(level + 1);
            let (dst, src) = (&mut fine[level], &coarse[0]);
            if dst.arch == src.arch {
                dst.generator = src.generator.clone();
                dst.discriminator = src.discriminator.clone();
            }
        }
        let size = model.plan.size(level);
        let reals = model
            .images
            .iter()
            .map(|img| resample(img, size).map(|i| i.into_tensor()))
            .collect::<Result<Vec<_>>>()?;
        let report = ScaleReport {
            scale: level,
            sigma: model.sigmas[level],
            iterations: Vec::new(),
        };
        Ok(ScaleTrainer {
            model,
            level,
            cfg: cfg.clone(),
            embedding,
            reals,
            rec_cache: None,
            report,
            iteration: 0,
        })
    }

    fn job(&self, id: IdSource, noise: NoiseMode, salt: u64) -> Result<RenderJob<'_>> {
        Ok(RenderJob::new(self.model, self.model.plan.sizes.clone(), id, noise, self.model.seed)?.with_salt(salt))
    }

    /// Prev-up and reconstruction noise of the reconstruction path for one window.
    fn rec_inputs(&self, id: usize, rows: Range<usize>, cols: Range<usize>) -> Result<(Tensor, Tensor)> {
        let job = self.job(IdSource::Constant(id), NoiseMode::Reconstruction, 0)?;
        let li = job.level_inputs(self.level, rows.clone(), cols.clone())?;
        let z = job.noise_region(self.level, grown(rows), grown(cols));
        Ok((li.prev.zip_with(&z, |a, b| a + b), li.residual))
    }

    fn prepare(&mut self, batch: &[BatchItem]) -> Result<Prepared> {
        let level = self.level;
        let cropped = self.model.plan.crop(level).is_some();
        if !cropped && self.rec_cache.is_none() {
            let size = self.model.plan.size(level);
            let cache = (0..self.model.num_ids)
                .map(|k| self.rec_inputs(k, 0..size.0, 0..size.1))
                .collect::<Result<Vec<_>>>()?;
            self.rec_cache = Some(cache);
        }
        let mut parts: [Vec<Tensor>; 6] = Default::default();
        for (b, item) in batch.iter().enumerate() {
            let (rows, cols) = (item.window.rows(), item.window.cols());
            let salt = stream_id(&[purpose::TRAIN, level as u64, self.iteration as u64, b as u64]);
            let fake_job = self.job(IdSource::Constant(item.id), NoiseMode::Random, salt)?;
            let li = fake_job.level_inputs(level, rows.clone(), cols.clone())?;
            let (rec_in, rec_res) = match &self.rec_cache {
                Some(c) => c[item.id].clone(),
                None => self.rec_inputs(item.id, rows.clone(), cols.clone())?,
            };
            let real = self.reals[item.id].window(rows.start as isize, cols.start as isize, rows.len(), cols.len());
            for (slot, t) in parts.iter_mut().zip([li.prev, li.residual, li.id, rec_in, rec_res, real]) {
                slot.push(t);
            }
        }
        let [a, b, c, d, e, f] = parts.map(|p| Tensor::stack(&p));
        Ok(Prepared {
            prev_fake: a,
            res_fake: b,
            ids: c,
            rec_input: d,
            rec_res: e,
            real: f,
        })
    }

    fn step_noise(&self, batch: &[BatchItem], step: usize) -> Tensor {
        let size = self.model.plan.size(self.level);
        let parts: Vec<Tensor> = batch
            .iter()
            .enumerate()
            .map(|(b, item)| {
                let field = NoiseField::new(
                    self.model.seed,
                    stream_id(&[purpose::TRAIN, self.level as u64, self.iteration as u64, b as u64, step as u64 + 1]),
                    size,
                    self.model.sigmas[self.level],
                );
                field.region(grown(item.window.rows()), grown(item.window.cols()))
            })
            .collect();
        Tensor::stack(&parts)
    }

    /// One iteration: `d_steps` critic updates then `g_steps` generator updates.
    pub fn step(&mut self) -> Result<IterationReport> {
        let (res, peak) = memory::measure_peak(|| self.step_inner());
        let mut r = res?;
        r.peak_bytes = peak;
        self.report.iterations.push(r.clone());
        Ok(r)
    }

    fn step_inner(&mut self) -> Result<IterationReport> {
        let level = self.level;
        let it = self.iteration;
        let cfg = self.cfg.clone();
        let mut brng = substream(self.model.seed, &[purpose::BATCH, level as u64, it as u64]);
        let batch = make_batch(level, &self.model.plan, self.model.num_ids, &mut brng);
        let prep = self.prepare(&batch)?;
        let spec_g = self.model.scales[level].arch.generator;
        let adam_d = Adam::new(cfg.lr_d, cfg.beta1, cfg.beta2);
        let adam_g = Adam::new(cfg.lr_g, cfg.beta1, cfg.beta2);
        let ids = Var::constant(prep.ids.clone());
        let mut report = IterationReport {
            scale: level,
            iteration: it,
            d_loss: 0.0,
            g_adv: 0.0,
            g_rec: 0.0,
            g_sem: 0.0,
            gp: 0.0,
            peak_bytes: 0,
        };

        for s in 0..cfg.d_steps {
            let noise = self.step_noise(&batch, s);
            let input = prep.prev_fake.zip_with(&noise, |a, b| a + b);
            let fake = no_grad(|| {
                let g = as_vars(&self.model.scales[level].generator, false);
                generator_forward(&spec_g, &g, &Var::constant(input), &Var::constant(prep.res_fake.clone()), &ids)
                    .map(|v| v.value().clone())
            })?;
            let mut urng = substream(self.model.seed, &[purpose::TRAIN, level as u64, it as u64, 1 << 20 | s as u64]);
            let u: Vec<f64> = (0..batch.len()).map(|_| urng.random::<f64>()).collect();
            let sm = &mut self.model.scales[level];
            let d_vars = as_vars(&sm.discriminator, true);
            let critic = |x: &Var| discriminator_forward(&d_vars, x);
            let loss = wgan_gp_d_loss(&critic, &prep.real, &fake, cfg.lambda_gp, &u)?;
            check_finite(level, it, "critic loss", loss.total.item())?;
            let refs: Vec<&Var> = d_vars.iter().collect();
            let grads = finite_grads(level, it, "critic", &grad(&loss.total, &refs, false))?;
            adam_d.step(&mut sm.disc_opt, &mut sm.discriminator, &grads);
            report.d_loss = loss.total.item();
            report.gp = loss.gp;
        }

        for s in 0..cfg.g_steps {
            let noise = self.step_noise(&batch, cfg.d_steps + s);
            let input = prep.prev_fake.zip_with(&noise, |a, b| a + b);
            let sem_inputs = if cfg.alpha_sem > 0.0 {
                Some(self.semantic_inputs(&batch[0], s)?)
            } else {
                None
            };
            let sm = &mut self.model.scales[level];
            let g_vars = as_vars(&sm.generator, true);
            let d_vars = as_vars(&sm.discriminator, false);
            let fake = generator_forward(&spec_g, &g_vars, &Var::constant(input), &Var::constant(prep.res_fake.clone()), &ids)?;
            let adv = generator_adv_loss(&discriminator_forward(&d_vars, &fake)?);
            let rec_out = generator_forward(
                &spec_g,
                &g_vars,
                &Var::constant(prep.rec_input.clone()),
                &Var::constant(prep.rec_res.clone()),
                &ids,
            )?;
            let rec = reconstruction_loss(&rec_out, &prep.real);
            let mut total = adv.add(&rec.scale(cfg.alpha_rec));
            let mut sem_v = 0.0;
            if let (Some((alpha, input, residual, id, targets)), Some(phi)) = (sem_inputs, self.embedding) {
                let out = generator_forward(&spec_g, &g_vars, &Var::constant(input), &Var::constant(residual), &Var::constant(id))?;
                let sem = semantic_blend_loss(&out, &alpha, &targets, phi)?;
                sem_v = sem.item();
                total = total.add(&sem.scale(cfg.alpha_sem));
            }
            check_finite(level, it, "generator loss", total.item())?;
            let refs: Vec<&Var> = g_vars.iter().collect();
            let grads = finite_grads(level, it, "generator", &grad(&total, &refs, false))?;
            adam_g.step(&mut sm.gen_opt, &mut sm.generator, &grads);
            report.g_adv = adv.item();
            report.g_rec = rec.item();
            report.g_sem = sem_v;
        }
        self.iteration += 1;
        Ok(report)
    }

    /// Inputs for one blended reconstruction over the first sample's window.
    #[allow(clippy::type_complexity)]
    fn semantic_inputs(&self, item: &BatchItem, step: usize) -> Result<(Vec<f64>, Tensor, Tensor, Tensor, Vec<Tensor>)> {
        let mut rng = substream(self.model.seed, &[purpose::SEMANTIC, self.level as u64, self.iteration as u64, step as u64]);
        let alpha = dirichlet_ones(self.model.num_ids, &mut rng);
        let (rows, cols) = (item.window.rows(), item.window.cols());
        let job = self.job(IdSource::Blend(alpha.clone()), NoiseMode::Reconstruction, 0)?;
        let li = job.level_inputs(self.level, rows.clone(), cols.clone())?;
        let z = job.noise_region(self.level, grown(rows.clone()), grown(cols.clone()));
        let targets = self
            .reals
            .iter()
            .map(|r| r.window(rows.start as isize, cols.start as isize, rows.len(), cols.len()))
            .collect();
        Ok((alpha, li.prev.zip_with(&z, |a, b| a + b), li.residual, li.id, targets))
    }

    pub fn run(mut self, observer: &mut dyn TrainObserver) -> Result<ScaleReport> {
        for _ in 0..self.cfg.iterations {
            let r = self.step()?;
            observer.iteration(&r);
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> ScaleReport {
        let sm = &mut self.model.scales[self.level];
        sm.iterations += self.iteration;
        sm.trained = true;
        self.report
    }
}

pub fn train_scale(
    model: &mut Model,
    level: usize,
    cfg: &TrainConfig,
    embedding: Option<&dyn Embedding>,
    observer: &mut dyn TrainObserver,
) -> Result<ScaleReport> {
    ScaleTrainer::new(model, level, cfg, embedding)?.run(observer)
}

/// Plan, initialize and train every level, coarse to fine.
pub fn train_all(
    images: &[ImageBuffer],
    cfg: &TrainConfig,
    embedding: Option<&dyn Embedding>,
    observer: &mut dyn TrainObserver,
) -> Result<Model> {
    let model = init_model(images, cfg)?;
    continue_training(model, cfg, embedding, observer)
}

/// Trains every level not yet marked trained.
pub fn continue_training(
    mut model: Model,
    cfg: &TrainConfig,
    embedding: Option<&dyn Embedding>,
    observer: &mut dyn TrainObserver,
) -> Result<Model> {
    for level in (0..model.num_scales()).rev() {
        if model.scales[level].trained {
            continue;
        }
        let report = train_scale(&mut model, level, cfg, embedding, observer)?;
        observer.scale_done(&model, &report)?;
    }
    Ok(model)
}

/// An untrained model: plan from the first image, all images resized to it
/// and rounded to 8 bits.
pub fn init_model(images: &[ImageBuffer], cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("at least one training image is required".into()))?;
    let plan = build_scale_plan(first.size(), cfg.scale_factor, cfg.min_dim, cfg.max_dim, cfg.crop_window())?;
    let imgs = images
        .iter()
        .map(|i| resample(i, plan.full_size()).map(|r| r.quantized()))
        .collect::<Result<Vec<_>>>()?;
    Model::new(plan, imgs, cfg.arch(), cfg.seed, cfg.sigma_base, cfg.c_rec)
}

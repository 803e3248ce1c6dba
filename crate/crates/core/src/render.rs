//! Region rendering through the pyramid.
//!
//! Any rectangle of any level can be rendered on its own: the level's input
//! is gathered over the rectangle grown by the halo (zero outside the image),
//! and the upsampled coarser output it needs is rendered recursively over
//! just the source rows/columns the resampler reads. Rendering the full grid
//! and rendering a window therefore agree exactly, and the memory of a
//! windowed render depends on the window, not the image.

use std::ops::Range;

use crate::autograd::{no_grad, Var};
use crate::error::{Error, Result};
use crate::identity::{BinaryMask, IdentitySchedule};
use crate::model::Model;
use crate::networks::{as_vars, generator_forward, HALO, RF};
use crate::noise::{stream_id, NoiseField};
use crate::pyramid::{resample_tensor, Kernel, Resampler};
use crate::tensor::Tensor;

/// Where the identity map of a render comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum IdSource {
    /// One-hot identity everywhere.
    Constant(usize),
    /// Spatially constant mixture.
    Blend(Vec<f64>),
    /// Explicit map per level, sized to the render's level sizes.
    Schedule(IdentitySchedule),
}

/// Which noise feeds each pixel.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseMode {
    Random,
    /// The model's fixed reconstruction noise; needs the training sizes.
    Reconstruction,
    /// Reconstruction noise where the mask is set, random elsewhere.
    Faithful(BinaryMask),
    /// Reconstruction noise left-aligned before `left_end` and right-aligned
    /// from `right_start` (fractions of the width), random in between.
    Meld { left_end: f64, right_start: f64 },
}

/// Side of the tiles a full level is rendered in.
pub const TILE: usize = 192;

/// One image to render.
#[derive(Clone, Debug)]
pub struct RenderJob<'a> {
    pub model: &'a Model,
    pub sizes: Vec<(usize, usize)>,
    pub ids: IdSource,
    pub noise: NoiseMode,
    /// Seed and stream salt of the random noise.
    pub seed: u64,
    pub salt: u64,
    /// Image replacing the upsampled coarser output at a level.
    inject: Option<(usize, Tensor)>,
}

/// Inputs of one level over one window.
pub struct LevelInputs {
    /// Upsampled coarser output over the grown window, zero outside the image.
    pub prev: Tensor,
    /// `prev` over the core window.
    pub residual: Tensor,
    /// Identity weights over the grown window, zero outside the image.
    pub id: Tensor,
}

fn grown(r: &Range<usize>) -> Range<isize> {
    r.start as isize - HALO as isize..r.end as isize + HALO as isize
}

fn clip(r: &Range<isize>, len: usize) -> Range<usize> {
    let s = r.start.clamp(0, len as isize) as usize;
    let e = r.end.clamp(0, len as isize) as usize;
    s..e.max(s)
}

impl<'a> RenderJob<'a> {
    pub fn new(
        model: &'a Model,
        sizes: Vec<(usize, usize)>,
        ids: IdSource,
        noise: NoiseMode,
        seed: u64,
    ) -> Result<Self> {
        if sizes.len() != model.num_scales() {
            return Err(Error::InvalidInput(format!(
                "{} level sizes for a {}-level model",
                sizes.len(),
                model.num_scales()
            )));
        }
        let coarse = sizes[model.coarsest()];
        if coarse.0.min(coarse.1) < RF {
            return Err(Error::TooSmall {
                got: coarse.0.min(coarse.1),
                rf: RF,
            });
        }
        match &ids {
            IdSource::Constant(k) => model.check_id(*k)?,
            IdSource::Blend(w) => {
                crate::identity::blend_constant(w, (1, 1))?;
                if w.len() != model.num_ids {
                    return Err(Error::InvalidInput(format!(
                        "{} blend weights for K = {}",
                        w.len(),
                        model.num_ids
                    )));
                }
            }
            IdSource::Schedule(s) => {
                if s.num_scales() != sizes.len() || s.num_ids() != model.num_ids {
                    return Err(Error::InvalidInput(
                        "identity schedule does not match the model".into(),
                    ));
                }
                for (m, &sz) in s.per_scale.iter().zip(&sizes) {
                    if m.size() != sz {
                        return Err(Error::Geometry(format!(
                            "identity map {:?} at a level of size {sz:?}",
                            m.size()
                        )));
                    }
                }
            }
        }
        let needs_rec = |l: usize| -> Result<()> {
            if sizes[l] != model.plan.size(l) {
                return Err(Error::InvalidInput(format!(
                    "reconstruction noise needs the training size {:?}, got {:?}",
                    model.plan.full_size(),
                    sizes[0]
                )));
            }
            Ok(())
        };
        match &noise {
            NoiseMode::Random => {}
            NoiseMode::Reconstruction | NoiseMode::Faithful(_) => {
                for l in 0..sizes.len() {
                    needs_rec(l)?;
                }
            }
            NoiseMode::Meld { left_end, right_start } => {
                if !(0.0 <= *left_end && left_end <= right_start && *right_start <= 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "meld anchors {left_end} / {right_start} out of order"
                    )));
                }
                for (l, &(h, w)) in sizes.iter().enumerate() {
                    let (th, tw) = model.plan.size(l);
                    if h != th || w < tw {
                        return Err(Error::InvalidInput(format!(
                            "meld output {h}x{w} at level {l} must keep the training height {th} and be at least {tw} wide"
                        )));
                    }
                    let a = (left_end * w as f64).round() as usize;
                    let b = (right_start * w as f64).round() as usize;
                    if a > tw || w - b > tw {
                        return Err(Error::InvalidInput(format!(
                            "meld anchors wider than the training image at level {l}"
                        )));
                    }
                }
            }
        }
        Ok(RenderJob {
            model,
            sizes,
            ids,
            noise,
            seed,
            salt: 0,
            inject: None,
        })
    }

    pub fn with_salt(mut self, salt: u64) -> Self {
        self.salt = salt;
        self
    }

    /// Uses `image` (any size, resampled) as the coarser output feeding `level`;
    /// levels above it are skipped.
    pub fn with_injection(mut self, level: usize, image: &Tensor) -> Result<Self> {
        if level >= self.sizes.len() {
            return Err(Error::InvalidInput(format!(
                "injection level {level} outside 0..{}",
                self.sizes.len()
            )));
        }
        let t = resample_tensor(image, self.sizes[level], Kernel::Bicubic);
        self.inject = Some((level, t));
        Ok(self)
    }

    pub fn size(&self, level: usize) -> (usize, usize) {
        self.sizes[level]
    }

    fn top(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn random_field(&self, level: usize) -> NoiseField {
        NoiseField::new(
            self.seed,
            stream_id(&[self.salt, level as u64]),
            self.sizes[level],
            self.model.sigmas[level],
        )
    }

    /// Noise over a region, zero outside the level's grid.
    pub fn noise_region(&self, level: usize, rows: Range<isize>, cols: Range<isize>) -> Tensor {
        let rec = || self.model.rec_field(level);
        match &self.noise {
            NoiseMode::Random => self.random_field(level).region(rows, cols),
            NoiseMode::Reconstruction => rec().region(rows, cols),
            NoiseMode::Faithful(mask) => {
                let (h, w) = self.sizes[level];
                let m = mask.resize((h, w));
                let r = rec().region(rows.clone(), cols.clone());
                let mut out = self.random_field(level).region(rows.clone(), cols.clone());
                for c in 0..3 {
                    for (ry, y) in rows.clone().enumerate() {
                        for (rx, x) in cols.clone().enumerate() {
                            let inside = y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
                            if inside && m.get(y as usize, x as usize) {
                                out.set(0, c, ry, rx, r.at(0, c, ry, rx));
                            }
                        }
                    }
                }
                out
            }
            NoiseMode::Meld { left_end, right_start } => {
                let w = self.sizes[level].1 as isize;
                let tw = self.model.plan.size(level).1 as isize;
                let a = (left_end * w as f64).round() as isize;
                let b = (right_start * w as f64).round() as isize;
                let shift = w - tw;
                let left = rec().region(rows.clone(), cols.clone());
                let right = rec().region(rows.clone(), cols.start - shift..cols.end - shift);
                let mut out = self.random_field(level).region(rows.clone(), cols.clone());
                for c in 0..3 {
                    for ry in 0..rows.len() {
                        for (rx, x) in cols.clone().enumerate() {
                            if (0..a).contains(&x) {
                                out.set(0, c, ry, rx, left.at(0, c, ry, rx));
                            } else if (b..w).contains(&x) {
                                out.set(0, c, ry, rx, right.at(0, c, ry, rx));
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Identity weights `[1, K, rows, cols]`, zero outside the level's grid.
    pub fn id_region(&self, level: usize, rows: Range<isize>, cols: Range<isize>) -> Tensor {
        let (h, w) = self.sizes[level];
        let k = self.model.num_ids;
        let inside = |y: usize, x: usize| {
            let (y, x) = (y as isize + rows.start, x as isize + cols.start);
            y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w
        };
        match &self.ids {
            IdSource::Constant(id) => Tensor::from_fn([1, k, rows.len(), cols.len()], |[_, c, y, x]| {
                if c == *id && inside(y, x) {
                    1.0
                } else {
                    0.0
                }
            }),
            IdSource::Blend(wts) => Tensor::from_fn([1, k, rows.len(), cols.len()], |[_, c, y, x]| {
                if inside(y, x) {
                    wts[c]
                } else {
                    0.0
                }
            }),
            IdSource::Schedule(s) => s.at(level).tensor().window(rows.start, cols.start, rows.len(), cols.len()),
        }
    }

    /// The coarser output upsampled to `level`, over an in-bounds region.
    pub fn prev_region(&self, level: usize, rows: Range<usize>, cols: Range<usize>) -> Result<Tensor> {
        if let Some((m, img)) = &self.inject {
            if *m == level {
                return Ok(img.window(rows.start as isize, cols.start as isize, rows.len(), cols.len()));
            }
        }
        if level == self.top() {
            return Ok(Tensor::zeros([1, 3, rows.len(), cols.len()]));
        }
        let rs = Resampler::new(self.sizes[level + 1], self.sizes[level], Kernel::Bicubic);
        let (sr, sc) = rs.source_region(rows.clone(), cols.clone());
        let src = self.render_region(level + 1, sr.clone(), sc.clone())?;
        Ok(rs.apply_region(&src, (sr.start, sc.start), rows, cols))
    }

    /// Everything the level's generator consumes over a core window, except noise.
    pub fn level_inputs(&self, level: usize, rows: Range<usize>, cols: Range<usize>) -> Result<LevelInputs> {
        let (h, w) = self.sizes[level];
        if rows.end > h || cols.end > w || rows.is_empty() || cols.is_empty() {
            return Err(Error::Geometry(format!(
                "window {rows:?} x {cols:?} outside level {level} of size {h}x{w}"
            )));
        }
        let (gr, gc) = (grown(&rows), grown(&cols));
        let (cr, cc) = (clip(&gr, h), clip(&gc, w));
        let inner = self.prev_region(level, cr.clone(), cc.clone())?;
        let prev = inner.window(
            gr.start - cr.start as isize,
            gc.start - cc.start as isize,
            gr.len(),
            gc.len(),
        );
        let residual = prev.window(HALO as isize, HALO as isize, rows.len(), cols.len());
        let id = self.id_region(level, gr, gc);
        Ok(LevelInputs { prev, residual, id })
    }

    fn forward(&self, level: usize, input: Tensor, residual: Tensor, id: Tensor) -> Result<Tensor> {
        let sm = &self.model.scales[level];
        no_grad(|| {
            let params = as_vars(&sm.generator, false);
            let out = generator_forward(
                &sm.arch.generator,
                &params,
                &Var::constant(input),
                &Var::constant(residual),
                &Var::constant(id),
            )?;
            Ok(out.value().clone())
        })
    }

    /// Generator output of `level` over an in-bounds window, `[1, 3, rows, cols]`.
    pub fn render_region(&self, level: usize, rows: Range<usize>, cols: Range<usize>) -> Result<Tensor> {
        let li = self.level_inputs(level, rows.clone(), cols.clone())?;
        let noise = self.noise_region(level, grown(&rows), grown(&cols));
        self.forward(level, li.prev.zip_with(&noise, |a, b| a + b), li.residual, li.id)
    }

    /// Output of `level` over its whole grid. Levels are rendered coarse to
    /// fine, each in tiles of at most [`TILE`] squared pixels, which gives the
    /// same values as [`Self::render_region`] over the full grid.
    pub fn render_level(&self, level: usize) -> Result<Tensor> {
        let start = match &self.inject {
            Some((m, _)) if *m >= level => *m,
            _ => self.top(),
        };
        let mut out: Option<Tensor> = None;
        for l in (level..=start).rev() {
            let (h, w) = self.sizes[l];
            let prev = match (&self.inject, out.take()) {
                (Some((m, img)), _) if *m == l => img.clone(),
                (_, Some(o)) => Resampler::new(self.sizes[l + 1], (h, w), Kernel::Bicubic).apply_region(
                    &o,
                    (0, 0),
                    0..h,
                    0..w,
                ),
                (_, None) => Tensor::zeros([1, 3, h, w]),
            };
            let mut level_out = Tensor::zeros([1, 3, h, w]);
            for r0 in (0..h).step_by(TILE) {
                for c0 in (0..w).step_by(TILE) {
                    let (rows, cols) = (r0..(r0 + TILE).min(h), c0..(c0 + TILE).min(w));
                    let (gr, gc) = (grown(&rows), grown(&cols));
                    let input = prev
                        .window(gr.start, gc.start, gr.len(), gc.len())
                        .zip_with(&self.noise_region(l, gr.clone(), gc.clone()), |a, b| a + b);
                    let residual = prev.window(r0 as isize, c0 as isize, rows.len(), cols.len());
                    let t = self.forward(l, input, residual, self.id_region(l, gr, gc))?;
                    level_out.paste(&t, r0, c0);
                }
            }
            out = Some(level_out);
        }
        Ok(out.expect("at least one level"))
    }

    /// The finest output.
    pub fn render(&self) -> Result<Tensor> {
        self.render_level(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchConfig, Model};
    use crate::networks::ChannelSchedule;
    use crate::pyramid::{build_scale_plan, ImageBuffer};

    pub(crate) fn toy_model(size: (usize, usize), levels_r: f64, min_dim: usize) -> Model {
        let plan = build_scale_plan(size, levels_r, min_dim, 512, None).unwrap();
        let imgs = (0..2)
            .map(|k| {
                ImageBuffer::from_tensor_clamped(Tensor::from_fn([1, 3, size.0, size.1], |[_, c, y, x]| {
                    ((k * 3 + c) as f64 + y as f64 * 0.3 + x as f64 * 0.17).sin() * 0.8
                }))
            })
            .collect();
        let arch = ArchConfig {
            schedule: ChannelSchedule { base: 6, cap: 8, period: 1 },
            spade_hidden: Some(5),
        };
        let mut m = Model::new(plan, imgs, arch, 3, 0.1, 0.1).unwrap();
        // generic weights so the identity actually matters
        for (l, s) in m.scales.iter_mut().enumerate() {
            let mut rng = crate::noise::substream(40, &[l as u64]);
            use rand_distr::{Distribution, Normal};
            let d = Normal::new(0.0, 0.2).unwrap();
            for t in s.generator.iter_mut() {
                *t = Tensor::from_fn(t.shape(), |_| d.sample(&mut rng));
            }
        }
        m
    }

    #[test]
    fn windowed_render_matches_full_render() {
        let m = toy_model((40, 46), 0.75, 25);
        assert_eq!(m.num_scales(), 2);
        for noise in [NoiseMode::Random, NoiseMode::Reconstruction] {
            let job = RenderJob::new(&m, m.plan.sizes.clone(), IdSource::Constant(1), noise, 9).unwrap();
            let full = job.render().unwrap();
            for (rows, cols) in [(0..17, 0..20), (11..40, 5..33), (20..29, 30..46)] {
                let part = job.render_region(0, rows.clone(), cols.clone()).unwrap();
                let expect = full.window(rows.start as isize, cols.start as isize, rows.len(), cols.len());
                assert!(part.max_abs_diff(&expect) < 1e-12);
            }
        }
    }

    #[test]
    fn tiled_level_render_matches_single_region() {
        let m = toy_model((200, 230), 0.6, 60);
        assert!(m.num_scales() >= 3);
        let (h, w) = m.plan.size(0);
        assert!(h > TILE && w > TILE);
        let job = RenderJob::new(&m, m.plan.sizes.clone(), IdSource::Constant(0), NoiseMode::Random, 4).unwrap();
        assert_eq!(job.render().unwrap(), job.render_region(0, 0..h, 0..w).unwrap());
        let img = Tensor::full([1, 3, 30, 30], 0.25);
        let job = job.with_injection(1, &img).unwrap();
        assert_eq!(job.render().unwrap(), job.render_region(0, 0..h, 0..w).unwrap());
    }

    #[test]
    fn reconstruction_noise_requires_training_size() {
        let m = toy_model((40, 46), 0.75, 25);
        let sizes = m.plan.sizes_for_output((40, 60));
        assert!(RenderJob::new(&m, sizes.clone(), IdSource::Constant(0), NoiseMode::Reconstruction, 1).is_err());
        let job = RenderJob::new(&m, sizes, IdSource::Constant(0), NoiseMode::Random, 1).unwrap();
        assert_eq!(job.render().unwrap().shape(), [1, 3, 40, 60]);
    }

    #[test]
    fn too_small_output_is_rejected() {
        let m = toy_model((40, 46), 0.75, 25);
        let sizes = m.plan.sizes_for_output((12, 40));
        assert!(matches!(
            RenderJob::new(&m, sizes, IdSource::Constant(0), NoiseMode::Random, 1),
            Err(Error::TooSmall { .. })
        ));
    }
}

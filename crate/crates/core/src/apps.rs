//! Identity-map driven applications over a trained model.

use crate::error::{Error, Result};
use crate::identity::{
    blend_constant, scale_schedule_for_sizes, BinaryMask, IdentityMap, IdentitySchedule,
};
use crate::model::Model;
use crate::pyramid::ImageBuffer;
use crate::render::{IdSource, NoiseMode, RenderJob};
use crate::tensor::Tensor;

fn finish(t: Tensor) -> ImageBuffer {
    ImageBuffer::from_tensor_clamped(t)
}

/// The identity source for a map: constant one-hots and blends stay lazy.
fn source_for(model: &Model, map: &IdentityMap, sizes: &[(usize, usize)]) -> Result<IdSource> {
    if map.num_ids() != model.num_ids {
        return Err(Error::InvalidInput(format!(
            "identity map has K = {}, model has K = {}",
            map.num_ids(),
            model.num_ids
        )));
    }
    if let Some(k) = map.constant_identity() {
        return Ok(IdSource::Constant(k));
    }
    let first = map.pixel(0, 0);
    let (h, w) = map.size();
    let uniform = (0..h).all(|y| (0..w).all(|x| map.pixel(y, x) == first));
    if uniform {
        return Ok(IdSource::Blend(first));
    }
    Ok(IdSource::Schedule(IdentitySchedule::uniform(map, sizes)?))
}

/// Per-level sizes for an output size.
pub fn level_sizes(model: &Model, size: (usize, usize)) -> Vec<(usize, usize)> {
    model.plan.sizes_for_output(size)
}

/// A random sample of any size under an identity map (resampled per level).
pub fn sample(model: &Model, id_map: &IdentityMap, size: (usize, usize), seed: u64) -> Result<ImageBuffer> {
    let sizes = level_sizes(model, size);
    let ids = source_for(model, id_map, &sizes)?;
    let job = RenderJob::new(model, sizes, ids, NoiseMode::Random, seed)?;
    Ok(finish(job.render()?))
}

/// Generation with an explicit per-level schedule.
pub fn sample_schedule(model: &Model, schedule: IdentitySchedule, noise: NoiseMode, seed: u64) -> Result<ImageBuffer> {
    let sizes: Vec<_> = schedule.per_scale.iter().map(|m| m.size()).collect();
    let job = RenderJob::new(model, sizes, IdSource::Schedule(schedule), noise, seed)?;
    Ok(finish(job.render()?))
}

/// The fixed reconstruction noise under identity `k`.
pub fn reconstruct(model: &Model, k: usize) -> Result<ImageBuffer> {
    model.check_id(k)?;
    let job = RenderJob::new(model, model.plan.sizes.clone(), IdSource::Constant(k), NoiseMode::Reconstruction, 0)?;
    Ok(finish(job.render()?))
}

/// Identity map of a left-to-right meld across `ids`.
///
/// The transition bands together take `transition_frac` of the width and are
/// spread evenly between equal-width anchors.
pub fn meld_map(ids: &[usize], num_ids: usize, size: (usize, usize), transition_frac: f64) -> Result<IdentityMap> {
    if ids.len() < 2 {
        return Err(Error::InvalidInput("a meld needs at least two identities".into()));
    }
    if let Some(&k) = ids.iter().find(|&&k| k >= num_ids) {
        return Err(Error::InvalidInput(format!("identity {k} out of range for K = {num_ids}")));
    }
    if !(0.0..1.0).contains(&transition_frac) {
        return Err(Error::InvalidInput(format!(
            "transition fraction {transition_frac} outside [0, 1)"
        )));
    }
    let (h, w) = size;
    let segs = ids.len();
    let band = transition_frac / (segs - 1) as f64;
    let anchor = (1.0 - transition_frac) / segs as f64;
    let weights = Tensor::from_fn([1, num_ids, h, w], |[_, c, _, x]| {
        let t = (x as f64 + 0.5) / w as f64;
        // which band or anchor the pixel center falls in
        let mut start = 0.0;
        let mut out = 0.0;
        for i in 0..segs {
            let a_end = start + anchor;
            if t < a_end || i == segs - 1 {
                out = if ids[i] == c { 1.0 } else { 0.0 };
                break;
            }
            let b_end = a_end + band;
            if t < b_end {
                let f = ((t - a_end) / band).clamp(0.0, 1.0);
                let (l, r) = (ids[i], ids[i + 1]);
                out = if l == c { 1.0 - f } else { 0.0 } + if r == c { f } else { 0.0 };
                break;
            }
            start = b_end;
        }
        out
    });
    IdentityMap::new(weights)
}

/// Melds identities left to right; the outer anchors reuse the reconstruction
/// noise (left-aligned and right-aligned), everything else is random.
pub fn meld(
    model: &Model,
    ids: &[usize],
    out_width: usize,
    transition_frac: f64,
    seed: u64,
) -> Result<ImageBuffer> {
    let height = model.plan.full_size().0;
    let map = meld_map(ids, model.num_ids, (height, out_width), transition_frac)?;
    let sizes = level_sizes(model, (height, out_width));
    let anchor = (1.0 - transition_frac) / ids.len() as f64;
    let noise = NoiseMode::Meld {
        left_end: anchor,
        right_start: 1.0 - anchor,
    };
    let ids_src = IdSource::Schedule(IdentitySchedule::uniform(&map, &sizes)?);
    let job = RenderJob::new(model, sizes, ids_src, noise, seed)?;
    Ok(finish(job.render()?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphNoise {
    /// Fixed reconstruction noise: morphs between the training images.
    Reconstruction,
    /// One random draw shared by every frame: morphs between samples.
    Random,
}

/// One frame per weight vector, all at the training size.
pub fn morph(model: &Model, weights: &[Vec<f64>], noise: MorphNoise, seed: u64) -> Result<Vec<ImageBuffer>> {
    let size = model.plan.full_size();
    weights
        .iter()
        .map(|w| {
            let map = blend_constant(w, (1, 1))?;
            if map.num_ids() != model.num_ids {
                return Err(Error::InvalidInput(format!(
                    "{} morph weights for K = {}",
                    w.len(),
                    model.num_ids
                )));
            }
            let ids = match map.constant_identity() {
                Some(k) => IdSource::Constant(k),
                None => IdSource::Blend(w.clone()),
            };
            let mode = match noise {
                MorphNoise::Reconstruction => NoiseMode::Reconstruction,
                MorphNoise::Random => NoiseMode::Random,
            };
            let job = RenderJob::new(model, level_sizes(model, size), ids, mode, seed)?;
            Ok(finish(job.render()?))
        })
        .collect()
}

/// `structure_k` at levels `>= transition`, `texture_k` below; `transition`
/// equal to the level count means texture everywhere.
pub fn fuse(
    model: &Model,
    structure_k: usize,
    texture_k: usize,
    transition: usize,
    size: (usize, usize),
    seed: u64,
) -> Result<ImageBuffer> {
    model.check_id(structure_k)?;
    model.check_id(texture_k)?;
    if transition > model.num_scales() {
        return Err(Error::InvalidInput(format!(
            "transition level {transition} outside 0..={}",
            model.num_scales()
        )));
    }
    let sizes = level_sizes(model, size);
    let s = crate::identity::constant_id(structure_k, model.num_ids, (1, 1))?;
    let t = crate::identity::constant_id(texture_k, model.num_ids, (1, 1))?;
    let sched = if transition == model.num_scales() {
        IdentitySchedule::uniform(&t, &sizes)?
    } else {
        scale_schedule_for_sizes(&s, &t, transition, &sizes)?
    };
    let job = RenderJob::new(model, sizes, IdSource::Schedule(sched), NoiseMode::Random, seed)?;
    Ok(finish(job.render()?))
}

/// Generation under a per-pixel categorical map; pixels in `faithful` use the
/// reconstruction noise (which needs the training size).
pub fn spatial_sample(
    model: &Model,
    mask_map: &IdentityMap,
    faithful: Option<&BinaryMask>,
    seed: u64,
) -> Result<ImageBuffer> {
    if !mask_map.is_categorical() {
        return Err(Error::NotCategorical(
            "spatial sampling takes a categorical mask map".into(),
        ));
    }
    let sizes = level_sizes(model, mask_map.size());
    let ids = source_for(model, mask_map, &sizes)?;
    let noise = match faithful {
        None => NoiseMode::Random,
        Some(m) if m.bits.iter().all(|&b| b) => NoiseMode::Reconstruction,
        Some(m) if m.bits.iter().all(|&b| !b) => NoiseMode::Random,
        Some(m) => {
            if (m.height, m.width) != mask_map.size() {
                return Err(Error::Geometry("faithful mask size differs from the map".into()));
            }
            NoiseMode::Faithful(m.clone())
        }
    };
    let job = RenderJob::new(model, sizes, ids, noise, seed)?;
    Ok(finish(job.render()?))
}

/// Default injection level for editing: the second-coarsest.
pub fn default_inject_level(model: &Model) -> usize {
    model.coarsest().saturating_sub(1)
}

/// Feeds `edited` (resized to level `inject_level`) as the coarser output of
/// that level and re-renders it and every finer level with reconstruction
/// noise under `id_map`.
pub fn edit(
    model: &Model,
    edited: &ImageBuffer,
    inject_level: usize,
    id_map: &IdentityMap,
    seed: u64,
) -> Result<ImageBuffer> {
    if inject_level >= model.num_scales() {
        return Err(Error::InvalidInput(format!(
            "injection level {inject_level} outside 0..{}",
            model.num_scales()
        )));
    }
    let sizes = model.plan.sizes.clone();
    let ids = source_for(model, id_map, &sizes)?;
    let job = RenderJob::new(model, sizes, ids, NoiseMode::Reconstruction, seed)?
        .with_injection(inject_level, edited.tensor())?;
    Ok(finish(job.render()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meld_map_thirds_and_simplex() {
        let m = meld_map(&[0, 1], 2, (4, 300), 1.0 / 3.0).unwrap();
        for x in 0..100 {
            assert_eq!(m.pixel(0, x), vec![1.0, 0.0]);
        }
        for x in 200..300 {
            assert_eq!(m.pixel(3, x), vec![0.0, 1.0]);
        }
        let three = meld_map(&[0, 2, 1], 3, (2, 90), 0.4).unwrap();
        assert!(three.max_simplex_violation() < 1e-12);
        assert_eq!(three.pixel(0, 0), vec![1.0, 0.0, 0.0]);
        assert_eq!(three.pixel(0, 45), vec![0.0, 0.0, 1.0]);
        assert_eq!(three.pixel(0, 89), vec![0.0, 1.0, 0.0]);
        let step = meld_map(&[0, 1], 2, (1, 10), 0.0).unwrap();
        assert!(step.is_categorical());
        assert!(meld_map(&[0], 2, (1, 10), 0.3).is_err());
        assert!(meld_map(&[0, 1], 2, (1, 10), 1.0).is_err());
    }
}

//! Evaluation runs and the two training-set analyses: quality against the
//! similarity of the training images, and quality against their number.

use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use super::metrics::{diversity, sifid, MeanStd, MetricReport};
use super::niqe::{niqe, NiqeModel};
use crate::apps;
use crate::error::{Error, Result};
use crate::identity::constant_id;
use crate::memory;
use crate::model::Model;
use crate::pyramid::ImageBuffer;
use crate::train::{init_model, train_all, ScaleTrainer, TrainConfig};

/// `n` random samples of identity `k` at the training size, seeds `seed..seed + n`.
pub fn samples_for(model: &Model, k: usize, n: usize, seed: u64) -> Result<Vec<ImageBuffer>> {
    model.check_id(k)?;
    let map = constant_id(k, model.num_ids, (1, 1))?;
    let size = model.plan.full_size();
    (0..n as u64).map(|i| apps::sample(model, &map, size, seed + i)).collect()
}

/// Mean and spread of SIFID of each sample against `reference`.
pub fn sifid_stats(samples: &[ImageBuffer], reference: &ImageBuffer, ex: &dyn FeatureExtractor) -> Result<MeanStd> {
    let v = samples
        .iter()
        .map(|s| sifid(reference, s, ex))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeanStd::of(&v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Why a metric was skipped, if any was.
    pub notes: Vec<String>,
}

/// Diversity, SIFID and (optionally) NIQE over `n` samples of each identity
/// in `ids`; diversity is computed per identity and summarized across them.
pub fn evaluate(
    model: &Model,
    ids: &[usize],
    n: usize,
    seed: u64,
    ex: &dyn FeatureExtractor,
    niqe_model: Option<&NiqeModel>,
) -> Result<Evaluation> {
    if ids.is_empty() || n < 2 {
        return Err(Error::InvalidInput("evaluation needs an identity and at least 2 samples".into()));
    }
    let mut div = vec![];
    let mut sif = vec![];
    let mut nq = vec![];
    let mut notes = vec![];
    let niqe_model = match niqe_model {
        Some(m) => {
            let (h, w) = model.plan.full_size();
            if h.min(w) < m.min_side() {
                notes.push(format!(
                    "niqe skipped: images are {h}x{w}, the metric needs at least {0}x{0}",
                    m.min_side()
                ));
                None
            } else {
                Some(m)
            }
        }
        None => {
            notes.push("niqe skipped: no coefficient file configured".into());
            None
        }
    };
    for &k in ids {
        let samples = samples_for(model, k, n, seed)?;
        let reference = &model.images[k];
        div.push(diversity(&samples, reference)?);
        for s in &samples {
            sif.push(sifid(reference, s, ex)?);
            if let Some(m) = niqe_model {
                nq.push(niqe(s, m)?);
            }
        }
    }
    let report = MetricReport {
        samples: n * ids.len(),
        diversity: MeanStd::of(&div),
        sifid: MeanStd::of(&sif),
        niqe: niqe_model.map(|_| MeanStd::of(&nq)),
    };
    report.validate()?;
    Ok(Evaluation { report, notes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanoramaPoint {
    pub crop_index: usize,
    pub sifid: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanoramaResult {
    /// Crop 0 paired with itself, when requested.
    pub baseline: Option<PanoramaPoint>,
    /// Crop 0 paired with crop i, for i = 1..num_crops.
    pub curve: Vec<PanoramaPoint>,
}

impl PanoramaResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("crop_index,sifid_mean,sifid_std\n");
        for p in self.baseline.iter().chain(&self.curve) {
            s += &format!("{},{},{}\n", p.crop_index, p.sifid.mean, p.sifid.std);
        }
        s
    }
}

/// Left edges of `num_crops` full-height square-ish crops spaced so that
/// consecutive crops share `overlap` of their width.
pub fn panorama_crops(width: usize, num_crops: usize, overlap: f64) -> Result<(usize, Vec<usize>)> {
    if num_crops < 2 || !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidInput("need >= 2 crops and overlap in [0, 1)".into()));
    }
    let cw = (width as f64 / (1.0 + (num_crops - 1) as f64 * (1.0 - overlap))).floor() as usize;
    if cw == 0 {
        return Err(Error::InvalidInput("panorama too narrow for the crops".into()));
    }
    let stride = (width - cw) as f64 / (num_crops - 1) as f64;
    Ok((cw, (0..num_crops).map(|i| (i as f64 * stride).round() as usize).collect()))
}

#[derive(Clone, Debug)]
pub struct PanoramaConfig {
    pub num_crops: usize,
    pub overlap: f64,
    pub samples: usize,
    pub include_baseline: bool,
    /// Models trained per pair, with training seeds `train.seed + r`; SIFID
    /// is pooled over all of their samples.
    pub repeats: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

/// Trains one model per pair (crop 0, crop i) and scores identity-0 samples
/// against crop 0.
pub fn panorama_experiment(
    panorama: &ImageBuffer,
    cfg: &PanoramaConfig,
    ex: &dyn FeatureExtractor,
    progress: &mut dyn FnMut(&str),
) -> Result<PanoramaResult> {
    let (h, w) = panorama.size();
    let (cw, lefts) = panorama_crops(w, cfg.num_crops, cfg.overlap)?;
    let crops = lefts
        .iter()
        .map(|&l| panorama.crop(0, l, h, cw))
        .collect::<Result<Vec<_>>>()?;
    let run = |i: usize, progress: &mut dyn FnMut(&str)| -> Result<PanoramaPoint> {
        let mut values = vec![];
        for r in 0..cfg.repeats.max(1) {
            progress(&format!("panorama: training on crops 0 and {i} (run {})", r + 1));
            let mut train = cfg.train.clone();
            train.seed = cfg.train.seed.wrapping_add(r as u64);
            let model = train_all(&[crops[0].clone(), crops[i].clone()], &train, None, &mut ())?;
            for s in samples_for(&model, 0, cfg.samples, cfg.seed)? {
                values.push(sifid(&model.images[0], &s, ex)?);
            }
        }
        Ok(PanoramaPoint {
            crop_index: i,
            sifid: MeanStd::of(&values),
        })
    };
    let baseline = if cfg.include_baseline { Some(run(0, progress)?) } else { None };
    let curve = (1..cfg.num_crops).map(|i| run(i, progress)).collect::<Result<Vec<_>>>()?;
    Ok(PanoramaResult { baseline, curve })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub num_ids: usize,
    pub channels: usize,
    pub sifid: MeanStd,
}

pub fn capacity_csv(rows: &[CapacityRow]) -> String {
    let mut s = String::from("num_ids,channels,sifid_mean,sifid_std\n");
    for r in rows {
        s += &format!("{},{},{},{}\n", r.num_ids, r.channels, r.sifid.mean, r.sifid.std);
    }
    s
}

/// For every K in `ks` and every channel base, trains on the first K images
/// and scores samples of identity 0 against image 0.
#[allow(clippy::too_many_arguments)]
pub fn capacity_experiment(
    images: &[ImageBuffer],
    ks: &[usize],
    channel_variants: &[usize],
    train: &TrainConfig,
    samples: usize,
    seed: u64,
    ex: &dyn FeatureExtractor,
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<CapacityRow>> {
    if channel_variants.len() < 2 {
        return Err(Error::InvalidInput("capacity analysis needs at least two channel variants".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > images.len()) {
        return Err(Error::InvalidInput(format!(
            "K = {k} needs between 1 and {} images",
            images.len()
        )));
    }
    let mut rows = vec![];
    for &k in ks {
        for &c in channel_variants {
            progress(&format!("capacity: K = {k}, {c} channels"));
            let mut cfg = train.clone();
            cfg.channel_base = c;
            cfg.channel_cap = cfg.channel_cap.max(c);
            let model = train_all(&images[..k], &cfg, None, &mut ())?;
            let s = samples_for(&model, 0, samples, seed)?;
            rows.push(CapacityRow {
                num_ids: k,
                channels: c,
                sifid: sifid_stats(&s, &model.images[0], ex)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CroppingRow {
    pub variant: String,
    pub evaluation: Evaluation,
}

/// Vanilla (uncropped) training against cropped training on the same images.
pub fn cropping_experiment(
    images: &[ImageBuffer],
    train: &TrainConfig,
    crop: usize,
    samples: usize,
    seed: u64,
    ex: &dyn FeatureExtractor,
    niqe_model: Option<&NiqeModel>,
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<CroppingRow>> {
    use crate::train::CropSetting;
    let mut rows = vec![];
    for (name, setting) in [("vanilla", CropSetting::Off), ("cropping", CropSetting::Window(crop))] {
        progress(&format!("cropping: training the {name} variant"));
        let mut cfg = train.clone();
        cfg.crop = setting;
        let model = train_all(images, &cfg, None, &mut ())?;
        let ids: Vec<usize> = (0..model.num_ids).collect();
        rows.push(CroppingRow {
            variant: name.into(),
            evaluation: evaluate(&model, &ids, samples, seed, ex, niqe_model)?,
        });
    }
    Ok(rows)
}

/// Peak bytes allocated while `f` runs, above the level live at its start.
/// Needs the counting allocator installed as the global allocator.
pub fn memory_profile(f: impl FnOnce()) -> Result<usize> {
    if !memory::is_installed() {
        return Err(Error::Config(
            "memory profiling needs idblend::memory::CountingAllocator as the global allocator".into(),
        ));
    }
    Ok(memory::measure_peak(f).1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryPoint {
    pub side: usize,
    pub crop: Option<usize>,
    pub peak_bytes: usize,
}

/// Peak memory of one finest-level training step for square images of each
/// side. Coarser levels stay at their initial weights: their cost is
/// independent of training progress.
pub fn memory_curve(sides: &[usize], crop: Option<usize>, base: &TrainConfig) -> Result<Vec<MemoryPoint>> {
    use crate::train::CropSetting;
    if !memory::is_installed() {
        return Err(Error::Config(
            "memory profiling needs idblend::memory::CountingAllocator as the global allocator".into(),
        ));
    }
    sides
        .iter()
        .map(|&side| {
            let mut cfg = base.clone();
            cfg.max_dim = side;
            cfg.crop = match crop {
                Some(c) => CropSetting::Window(c),
                None => CropSetting::Off,
            };
            let img = super::textures::stripes((side, side), cfg.seed);
            let mut model = init_model(&[img], &cfg)?;
            for s in model.scales.iter_mut().skip(1) {
                s.trained = true;
            }
            let mut t = ScaleTrainer::new(&mut model, 0, &cfg, None)?;
            let r = t.step()?;
            Ok(MemoryPoint {
                side,
                crop,
                peak_bytes: r.peak_bytes,
            })
        })
        .collect()
}

pub fn memory_csv(points: &[MemoryPoint]) -> String {
    let mut s = String::from("side,crop,peak_bytes\n");
    for p in points {
        let c = p.crop.map(|c| c.to_string()).unwrap_or_else(|| "none".into());
        s += &format!("{},{},{}\n", p.side, c, p.peak_bytes);
    }
    s
}

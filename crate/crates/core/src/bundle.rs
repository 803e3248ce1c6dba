//! On-disk model bundles: a JSON manifest, the training images as PNG and one
//! binary checkpoint per scale, each pinned by a SHA-256 digest.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/images/id_<k>.png
//! <dir>/scales/scale_<ii>.ckpt     (two-digit level, 00 = finest)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ScaleModel};
use crate::networks::{DiscriminatorSpec, GeneratorSpec, ScaleArch};
use crate::optim::AdamState;
use crate::pyramid::{ImageBuffer, ScalePlan};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
const CKPT_MAGIC: &[u8; 4] = b"BGCK";
const CKPT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub identity: usize,
    /// Relative to the bundle directory.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub seed: u64,
    pub sigma_base: f64,
    pub c_rec: f64,
    pub sigmas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub scale: usize,
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub project_id: String,
    pub images: Vec<ImageEntry>,
    pub config: TrainConfig,
    pub plan: ScalePlan,
    pub noise: NoiseEntry,
    pub checkpoints: Vec<CheckpointEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub manifest: Manifest,
    pub model: Model,
}

impl Bundle {
    pub fn config(&self) -> &TrainConfig {
        &self.manifest.config
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn put_u16(b: &mut Vec<u8>, v: u16) {
    b.extend_from_slice(&v.to_le_bytes());
}
fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_tensors(b: &mut Vec<u8>, ts: &[Tensor]) {
    put_u32(b, ts.len() as u32);
    for t in ts {
        for d in t.shape() {
            put_u32(b, d as u32);
        }
        for v in t.data() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Binary checkpoint of one scale. Little-endian throughout.
pub fn encode_checkpoint(scale: usize, sm: &ScaleModel) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(CKPT_MAGIC);
    put_u16(&mut b, CKPT_VERSION);
    put_u16(&mut b, sm.trained as u16);
    put_u32(&mut b, scale as u32);
    put_u64(&mut b, sm.iterations as u64);
    let g = sm.arch.generator;
    for v in [g.channels, g.num_ids, g.spade_hidden, sm.arch.discriminator.channels] {
        put_u32(&mut b, v as u32);
    }
    put_tensors(&mut b, &sm.generator);
    put_tensors(&mut b, &sm.discriminator);
    for opt in [&sm.gen_opt, &sm.disc_opt] {
        put_u64(&mut b, opt.t);
        put_tensors(&mut b, &opt.m);
        put_tensors(&mut b, &opt.v);
    }
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.corrupt("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn corrupt(&self, reason: &str) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
    fn tensors(&mut self, shapes: &[[usize; 4]]) -> Result<Vec<Tensor>> {
        let n = self.u32()? as usize;
        if n != shapes.len() {
            return Err(self.corrupt("parameter count does not match the architecture"));
        }
        shapes
            .iter()
            .map(|&want| {
                let mut shape = [0usize; 4];
                for d in &mut shape {
                    *d = self.u32()? as usize;
                }
                if shape != want {
                    return Err(self.corrupt("parameter shape does not match the architecture"));
                }
                let len: usize = shape.iter().product();
                let raw = self.take(len * 8)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Ok(Tensor::new(shape, data))
            })
            .collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(usize, ScaleModel)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != CKPT_MAGIC {
        return Err(r.corrupt("not a checkpoint file"));
    }
    let version = r.u16()?;
    if version != CKPT_VERSION {
        return Err(Error::Version {
            found: version as u32,
            supported: CKPT_VERSION as u32,
        });
    }
    let trained = r.u16()? != 0;
    let scale = r.u32()? as usize;
    let iterations = r.u64()? as usize;
    let [channels, num_ids, spade_hidden, dch] = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
    let arch = ScaleArch {
        generator: GeneratorSpec {
            channels,
            num_ids,
            spade_hidden,
        },
        discriminator: DiscriminatorSpec { channels: dch },
    };
    let (gs, ds) = (arch.generator.shapes(), arch.discriminator.shapes());
    let generator = r.tensors(&gs)?;
    let discriminator = r.tensors(&ds)?;
    let mut opt = |shapes: &[[usize; 4]]| -> Result<AdamState> {
        let t = r.u64()?;
        let m = r.tensors(shapes)?;
        let v = r.tensors(shapes)?;
        Ok(AdamState { m, v, t })
    };
    let gen_opt = opt(&gs)?;
    let disc_opt = opt(&ds)?;
    if r.pos != bytes.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    Ok((
        scale,
        ScaleModel {
            arch,
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            iterations,
            trained,
        },
    ))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

/// Writes (or rewrites) a bundle; images and all checkpoints are written
/// before the manifest, so a reader never sees a manifest ahead of its files.
pub fn save_bundle(dir: impl AsRef<Path>, project_id: &str, model: &Model, cfg: &TrainConfig) -> Result<Manifest> {
    let dir = dir.as_ref();
    for sub in ["images", "scales"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut images = vec![];
    for (k, img) in model.images.iter().enumerate() {
        let rel = format!("images/id_{k}.png");
        if img != &img.quantized() {
            return Err(Error::InvalidInput(format!(
                "training image {k} is not 8-bit; PNG storage would change it"
            )));
        }
        write_atomic(&dir.join(&rel), &img.to_png_bytes())?;
        images.push(ImageEntry { identity: k, path: rel });
    }
    let mut checkpoints = vec![];
    for (i, sm) in model.scales.iter().enumerate() {
        let rel = format!("scales/scale_{i:02}.ckpt");
        let bytes = encode_checkpoint(i, sm);
        write_atomic(&dir.join(&rel), &bytes)?;
        checkpoints.push(CheckpointEntry {
            scale: i,
            path: rel,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        project_id: project_id.to_string(),
        images,
        config: cfg.clone(),
        plan: model.plan.clone(),
        noise: NoiseEntry {
            seed: model.seed,
            sigma_base: model.sigma_base,
            c_rec: model.c_rec,
            sigmas: model.sigmas.clone(),
        },
        checkpoints,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let bytes = read(&path)?;
    let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let found = v.get("format_version").and_then(|f| f.as_u64()).ok_or_else(|| Error::Corrupt {
        path: path.clone(),
        reason: "missing format_version".into(),
    })?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: found as u32,
            supported: FORMAT_VERSION,
        });
    }
    serde_json::from_value(v).map_err(|e| Error::Corrupt {
        path,
        reason: e.to_string(),
    })
}

fn check_manifest(m: &Manifest, path: &Path) -> Result<()> {
    let bad = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if m.images.is_empty() {
        return Err(bad("no training images".into()));
    }
    for (k, e) in m.images.iter().enumerate() {
        if e.identity != k {
            return Err(bad(format!("identity indices must run 0..K without gaps, found {} at {k}", e.identity)));
        }
    }
    let n = m.plan.num_scales();
    if m.checkpoints.len() != n || m.noise.sigmas.len() != n {
        return Err(bad(format!("{} checkpoints and {} sigmas for {n} scales", m.checkpoints.len(), m.noise.sigmas.len())));
    }
    for (i, c) in m.checkpoints.iter().enumerate() {
        if c.scale != i {
            return Err(bad(format!("checkpoint {i} is labeled scale {}", c.scale)));
        }
    }
    Ok(())
}

/// Loads and verifies a bundle. Every digest is checked before anything is
/// decoded, so a damaged bundle never loads partially.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Bundle> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    check_manifest(&manifest, &dir.join(MANIFEST))?;
    let mut raw = vec![];
    for c in &manifest.checkpoints {
        let path = dir.join(&c.path);
        let bytes = read(&path)?;
        let digest = sha256_hex(&bytes);
        if digest != c.sha256 {
            return Err(Error::Corrupt {
                path,
                reason: format!("digest {digest} does not match the manifest ({})", c.sha256),
            });
        }
        raw.push((path, bytes));
    }
    let mut images = vec![];
    for e in &manifest.images {
        let path: PathBuf = dir.join(&e.path);
        let img = ImageBuffer::load(&path)?;
        if img.size() != manifest.plan.full_size() {
            return Err(Error::Corrupt {
                path,
                reason: format!("image size {:?} differs from the plan", img.size()),
            });
        }
        images.push(img);
    }
    let mut scales = vec![];
    for (i, (path, bytes)) in raw.iter().enumerate() {
        let (scale, sm) = decode_checkpoint(bytes, path)?;
        let want = manifest.config.arch().arch_for(&manifest.plan, images.len(), i);
        if scale != i || sm.arch != want {
            return Err(Error::Corrupt {
                path: path.clone(),
                reason: format!("checkpoint for scale {scale} does not fit scale {i} of the plan"),
            });
        }
        scales.push(sm);
    }
    let model = Model {
        plan: manifest.plan.clone(),
        num_ids: images.len(),
        seed: manifest.noise.seed,
        sigma_base: manifest.noise.sigma_base,
        c_rec: manifest.noise.c_rec,
        sigmas: manifest.noise.sigmas.clone(),
        scales,
        images,
    };
    Ok(Bundle { manifest, model })
}

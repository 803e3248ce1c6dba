//! Identity maps: per-pixel mixture weights over the K training images.

use std::io::Cursor;

use crate::error::{Error, Result};
use crate::pyramid::{resample_tensor, Kernel, ScalePlan};
use crate::tensor::Tensor;

pub const SIMPLEX_TOL: f64 = 1e-6;

/// A `[1, K, h, w]` tensor whose per-pixel K-vectors lie on the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityMap {
    weights: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

fn check_size(size: (usize, usize)) -> Result<()> {
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::InvalidInput(format!("identity map size {size:?}")));
    }
    Ok(())
}

impl IdentityMap {
    /// Validates the simplex invariant.
    pub fn new(weights: Tensor) -> Result<Self> {
        let [n, k, h, w] = weights.shape();
        if n != 1 || k == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidInput(format!(
                "identity map must be [1, K>=1, h>=1, w>=1], got {:?}",
                weights.shape()
            )));
        }
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for c in 0..k {
                    let v = weights.at(0, c, y, x);
                    if !(v >= -SIMPLEX_TOL) || !v.is_finite() {
                        return Err(Error::Simplex(format!(
                            "weight {v} for identity {c} at pixel ({y}, {x})"
                        )));
                    }
                    s += v;
                }
                if (s - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::Simplex(format!(
                        "weights at pixel ({y}, {x}) sum to {s}"
                    )));
                }
            }
        }
        Ok(IdentityMap { weights })
    }

    /// Per-pixel clamp-and-renormalize; used after interpolation.
    fn renormalized(mut t: Tensor) -> Self {
        let [_, k, h, w] = t.shape();
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for c in 0..k {
                    let v = t.at(0, c, y, x).max(0.0);
                    t.set(0, c, y, x, v);
                    s += v;
                }
                for c in 0..k {
                    let v = if s > 0.0 { t.at(0, c, y, x) / s } else { 1.0 / k as f64 };
                    t.set(0, c, y, x, v);
                }
            }
        }
        IdentityMap { weights: t }
    }

    pub fn num_ids(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.weights.height()
    }

    pub fn width(&self) -> usize {
        self.weights.width()
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn tensor(&self) -> &Tensor {
        &self.weights
    }

    pub fn weight(&self, id: usize, y: usize, x: usize) -> f64 {
        self.weights.at(0, id, y, x)
    }

    pub fn pixel(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.num_ids()).map(|c| self.weight(c, y, x)).collect()
    }

    pub fn is_categorical(&self) -> bool {
        self.weights.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// The single identity when the map is a spatially constant one-hot.
    pub fn constant_identity(&self) -> Option<usize> {
        if !self.is_categorical() {
            return None;
        }
        let first = self.labels()[0];
        self.labels().iter().all(|&l| l == first).then_some(first)
    }

    /// Row-major argmax per pixel (ties go to the lower index).
    pub fn labels(&self) -> Vec<usize> {
        let (h, w) = self.size();
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let mut best = 0;
                for c in 1..self.num_ids() {
                    if self.weight(c, y, x) > self.weight(best, y, x) {
                        best = c;
                    }
                }
                out.push(best);
            }
        }
        out
    }

    pub fn max_simplex_violation(&self) -> f64 {
        let (h, w) = self.size();
        let mut worst: f64 = 0.0;
        for y in 0..h {
            for x in 0..w {
                let p = self.pixel(y, x);
                worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
                for v in p {
                    worst = worst.max(-v);
                }
            }
        }
        worst
    }
}

pub fn constant_id(k: usize, num_ids: usize, size: (usize, usize)) -> Result<IdentityMap> {
    check_size(size)?;
    if k >= num_ids {
        return Err(Error::InvalidInput(format!(
            "identity {k} out of range for K = {num_ids}"
        )));
    }
    let t = Tensor::from_fn([1, num_ids, size.0, size.1], |[_, c, _, _]| {
        if c == k {
            1.0
        } else {
            0.0
        }
    });
    Ok(IdentityMap { weights: t })
}

pub fn blend_constant(weights: &[f64], size: (usize, usize)) -> Result<IdentityMap> {
    check_size(size)?;
    if weights.is_empty() {
        return Err(Error::Simplex("empty weight vector".into()));
    }
    let t = Tensor::from_fn([1, weights.len(), size.0, size.1], |[_, c, _, _]| weights[c]);
    IdentityMap::new(t)
}

/// Categorical map from a per-pixel label grid (row-major).
pub fn from_labels(labels: &[usize], num_ids: usize, size: (usize, usize)) -> Result<IdentityMap> {
    check_size(size)?;
    if labels.len() != size.0 * size.1 {
        return Err(Error::InvalidInput(format!(
            "{} labels for a {}x{} map",
            labels.len(),
            size.0,
            size.1
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_ids) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for K = {num_ids}"
        )));
    }
    let t = Tensor::from_fn([1, num_ids, size.0, size.1], |[_, c, y, x]| {
        if labels[y * size.1 + x] == c {
            1.0
        } else {
            0.0
        }
    });
    Ok(IdentityMap { weights: t })
}

/// Categorical map from K binary masks that must partition the grid.
pub fn mask_id(masks: &[Vec<bool>], size: (usize, usize)) -> Result<IdentityMap> {
    check_size(size)?;
    let n = size.0 * size.1;
    if masks.is_empty() {
        return Err(Error::Partition("no masks given".into()));
    }
    if let Some(m) = masks.iter().find(|m| m.len() != n) {
        return Err(Error::InvalidInput(format!(
            "mask has {} pixels, expected {n}",
            m.len()
        )));
    }
    let mut labels = vec![0; n];
    for (p, label) in labels.iter_mut().enumerate() {
        let owners: Vec<usize> = (0..masks.len()).filter(|&k| masks[k][p]).collect();
        match owners.len() {
            1 => *label = owners[0],
            0 => {
                return Err(Error::Partition(format!(
                    "pixel ({}, {}) is not covered by any mask",
                    p / size.1,
                    p % size.1
                )))
            }
            _ => {
                return Err(Error::Partition(format!(
                    "pixel ({}, {}) is claimed by masks {owners:?}",
                    p / size.1,
                    p % size.1
                )))
            }
        }
    }
    from_labels(&labels, masks.len(), size)
}

/// Two-identity linear ramp: identity 0 before fraction `a`, identity 1 after `b`.
///
/// Fractions are measured at pixel centers, `t = (x + 0.5) / width`.
pub fn ramp_id(axis: Axis, fracs: (f64, f64), size: (usize, usize)) -> Result<IdentityMap> {
    check_size(size)?;
    let (a, b) = fracs;
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a >= b {
        return Err(Error::InvalidInput(format!(
            "ramp needs 0 <= a < b <= 1, got a = {a}, b = {b}"
        )));
    }
    let len = match axis {
        Axis::Horizontal => size.1,
        Axis::Vertical => size.0,
    };
    let w0: Vec<f64> = (0..len)
        .map(|i| {
            let t = (i as f64 + 0.5) / len as f64;
            ((b - t) / (b - a)).clamp(0.0, 1.0)
        })
        .collect();
    let t = Tensor::from_fn([1, 2, size.0, size.1], |[_, c, y, x]| {
        let v = match axis {
            Axis::Horizontal => w0[x],
            Axis::Vertical => w0[y],
        };
        if c == 0 {
            v
        } else {
            1.0 - v
        }
    });
    Ok(IdentityMap { weights: t })
}

/// Bilinear resample followed by per-pixel renormalization.
pub fn resample_id(map: &IdentityMap, target: (usize, usize)) -> Result<IdentityMap> {
    check_size(target)?;
    if map.size() == target {
        return Ok(map.clone());
    }
    let t = resample_tensor(map.tensor(), target, Kernel::Bilinear);
    Ok(IdentityMap::renormalized(t))
}

/// Sets weights to an explicit K-vector inside `rows × cols`; used to compose
/// maps (e.g. chaining ramps for three-way melds).
pub fn paste(base: &IdentityMap, patch: &IdentityMap, top: usize, left: usize) -> Result<IdentityMap> {
    if base.num_ids() != patch.num_ids() {
        return Err(Error::InvalidInput("identity counts differ".into()));
    }
    if top + patch.height() > base.height() || left + patch.width() > base.width() {
        return Err(Error::Geometry("patch outside the base map".into()));
    }
    let mut t = base.tensor().clone();
    for c in 0..base.num_ids() {
        for y in 0..patch.height() {
            for x in 0..patch.width() {
                t.set(0, c, top + y, left + x, patch.weight(c, y, x));
            }
        }
    }
    Ok(IdentityMap { weights: t })
}

/// Lifts a map onto a larger identity set, placing its identities at `ids`.
pub fn embed_ids(map: &IdentityMap, ids: &[usize], num_ids: usize) -> Result<IdentityMap> {
    if ids.len() != map.num_ids() || ids.iter().any(|&i| i >= num_ids) {
        return Err(Error::InvalidInput(format!(
            "cannot place {} identities at {ids:?} among {num_ids}",
            map.num_ids()
        )));
    }
    let (h, w) = map.size();
    let mut t = Tensor::zeros([1, num_ids, h, w]);
    for (src, &dst) in ids.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let v = t.at(0, dst, y, x) + map.weight(src, y, x);
                t.set(0, dst, y, x, v);
            }
        }
    }
    IdentityMap::new(t)
}

/// One identity map per pyramid level (index 0 = finest).
#[derive(Clone, Debug, PartialEq)]
pub struct IdentitySchedule {
    pub per_scale: Vec<IdentityMap>,
}

impl IdentitySchedule {
    /// The same map at every level, resampled to each size.
    pub fn uniform(map: &IdentityMap, sizes: &[(usize, usize)]) -> Result<Self> {
        let per_scale = sizes
            .iter()
            .map(|&s| resample_id(map, s))
            .collect::<Result<_>>()?;
        Ok(IdentitySchedule { per_scale })
    }

    pub fn num_scales(&self) -> usize {
        self.per_scale.len()
    }

    pub fn at(&self, level: usize) -> &IdentityMap {
        &self.per_scale[level]
    }

    pub fn num_ids(&self) -> usize {
        self.per_scale[0].num_ids()
    }
}

/// `coarse` at levels `>= transition`, `fine` below it, each at that level's size.
pub fn scale_schedule_for_sizes(
    coarse: &IdentityMap,
    fine: &IdentityMap,
    transition: usize,
    sizes: &[(usize, usize)],
) -> Result<IdentitySchedule> {
    if transition >= sizes.len() {
        return Err(Error::InvalidInput(format!(
            "transition level {transition} outside levels 0..{}",
            sizes.len()
        )));
    }
    if coarse.num_ids() != fine.num_ids() {
        return Err(Error::InvalidInput("identity counts differ".into()));
    }
    let per_scale = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| resample_id(if i >= transition { coarse } else { fine }, s))
        .collect::<Result<_>>()?;
    Ok(IdentitySchedule { per_scale })
}

pub fn scale_schedule(
    coarse: &IdentityMap,
    fine: &IdentityMap,
    transition: usize,
    plan: &ScalePlan,
) -> Result<IdentitySchedule> {
    scale_schedule_for_sizes(coarse, fine, transition, &plan.sizes)
}

/// A hard per-pixel on/off mask (row-major).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width || height == 0 || width == 0 {
            return Err(Error::InvalidInput("mask size mismatch".into()));
        }
        Ok(BinaryMask { height, width, bits })
    }

    pub fn filled(height: usize, width: usize, on: bool) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![on; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Nearest-neighbour resize (pixel centers); keeps the mask hard.
    pub fn resize(&self, target: (usize, usize)) -> BinaryMask {
        if (self.height, self.width) == target {
            return self.clone();
        }
        let pick = |o: usize, dst: usize, src: usize| {
            (((o as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1)
        };
        let mut bits = Vec::with_capacity(target.0 * target.1);
        for y in 0..target.0 {
            let sy = pick(y, target.0, self.height);
            for x in 0..target.1 {
                bits.push(self.get(sy, pick(x, target.1, self.width)));
            }
        }
        BinaryMask {
            height: target.0,
            width: target.1,
            bits,
        }
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_fn([1, 1, self.height, self.width], |[_, _, y, x]| {
            if self.get(y, x) {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Encodes a categorical map as an 8-bit indexed PNG; palette index = identity.
pub fn encode_indexed_png(map: &IdentityMap) -> Result<Vec<u8>> {
    if !map.is_categorical() {
        return Err(Error::NotCategorical(
            "indexed PNG can only hold one-hot maps; use the float raster".into(),
        ));
    }
    if map.num_ids() > 256 {
        return Err(Error::InvalidInput("more than 256 identities".into()));
    }
    let (h, w) = map.size();
    let labels: Vec<u8> = map.labels().into_iter().map(|l| l as u8).collect();
    let mut palette = Vec::with_capacity(map.num_ids() * 3);
    for k in 0..map.num_ids() {
        palette.extend_from_slice(&palette_color(k));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Image(e.to_string()))?;
        writer
            .write_image_data(&labels)
            .map_err(|e| Error::Image(e.to_string()))?;
    }
    Ok(out)
}

/// Fixed colour per identity index.
pub fn palette_color(k: usize) -> [u8; 3] {
    const BASE: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [255, 225, 25],
        [145, 30, 180],
        [245, 130, 48],
        [70, 240, 240],
        [128, 128, 128],
    ];
    if k < BASE.len() {
        BASE[k]
    } else {
        let v = (k * 37 % 256) as u8;
        [v, v.wrapping_mul(3), v.wrapping_mul(7)]
    }
}

/// Decodes an indexed (or 8-bit grayscale) PNG into per-pixel labels.
pub fn decode_label_png(bytes: &[u8]) -> Result<(Vec<usize>, (usize, usize))> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| Error::Image(e.to_string()))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    let (color, depth) = (info.color_type, info.bit_depth);
    if !matches!(color, png::ColorType::Indexed | png::ColorType::Grayscale) {
        return Err(Error::Image(format!(
            "label PNG must be indexed or grayscale, got {color:?}"
        )));
    }
    let bits = match depth {
        png::BitDepth::One => 1,
        png::BitDepth::Two => 2,
        png::BitDepth::Four => 4,
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => {
            return Err(Error::Image("16-bit label PNGs are not supported".into()))
        }
    };
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Image("PNG too large".into()))?];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(e.to_string()))?;
    let stride = frame.line_size;
    let mut labels = Vec::with_capacity(h * w);
    for y in 0..h {
        let row = &buf[y * stride..(y + 1) * stride];
        for x in 0..w {
            let bit = x * bits;
            let byte = row[bit / 8];
            let shift = 8 - bits - (bit % 8);
            labels.push(((byte >> shift) & ((1u16 << bits) - 1) as u8) as usize);
        }
    }
    Ok((labels, (h, w)))
}

pub fn decode_indexed_png(bytes: &[u8], num_ids: usize) -> Result<IdentityMap> {
    let (labels, size) = decode_label_png(bytes)?;
    from_labels(&labels, num_ids, size)
}

const RASTER_MAGIC: &[u8; 4] = b"BGID";
pub const RASTER_VERSION: u16 = 1;

/// K-plane float raster: 16-byte little-endian header
/// `{magic "BGID", version u16, K u16, h u32, w u32}` then K planes of f32.
pub fn encode_raster(map: &IdentityMap) -> Vec<u8> {
    let (h, w) = map.size();
    let k = map.num_ids();
    let mut out = Vec::with_capacity(16 + 4 * k * h * w);
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u16).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in map.tensor().data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Decodes a float raster and renormalizes away f32 rounding.
pub fn decode_raster(bytes: &[u8]) -> Result<IdentityMap> {
    if bytes.len() < 16 || &bytes[..4] != RASTER_MAGIC {
        return Err(Error::InvalidInput("not a BGID raster (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RASTER_VERSION {
        return Err(Error::Version {
            found: version as u32,
            supported: RASTER_VERSION as u32,
        });
    }
    let k = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let n = k
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::InvalidInput("raster dimensions overflow".into()))?;
    if bytes.len() != 16 + 4 * n {
        return Err(Error::InvalidInput(format!(
            "raster body has {} bytes, header implies {}",
            bytes.len() - 16,
            4 * n
        )));
    }
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if k == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidInput(format!("raster of size {k}x{h}x{w}")));
    }
    let t = Tensor::new([1, k, h, w], data);
    // f32 storage loses ~1e-7 per weight; validate at that precision.
    let stored = IdentityMap { weights: t.clone() };
    let worst = stored.max_simplex_violation();
    if !(worst <= 1e-5) {
        return Err(Error::Simplex(format!(
            "raster weights leave the simplex by {worst}"
        )));
    }
    Ok(IdentityMap::renormalized(t))
}

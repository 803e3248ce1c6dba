//! Images, resampling, scale plans and crop-with-halo geometry.
//!
//! Images live in `[-1, 1]` internally; conversion from and to 8-bit happens
//! only at the I/O boundary. Resampling is separable: each output row/column
//! is a fixed list of weighted source taps, which lets a caller compute any
//! rectangular sub-region of a resample bit-exactly from a sub-window of the
//! source. The cropped training path relies on that.

use std::io::Cursor;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image with values in `[-1, 1]`, stored as a `[1, 3, h, w]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    tensor: Tensor,
}

impl ImageBuffer {
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        let [n, c, h, w] = tensor.shape();
        if n != 1 || c != 3 || h == 0 || w == 0 {
            return Err(Error::InvalidInput(format!(
                "image tensor must be [1, 3, h>=1, w>=1], got {:?}",
                tensor.shape()
            )));
        }
        if let Some(v) = tensor.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "image value {v} outside [-1, 1]"
            )));
        }
        Ok(ImageBuffer { tensor })
    }

    /// Clamps into `[-1, 1]` instead of rejecting out-of-range values.
    pub fn from_tensor_clamped(tensor: Tensor) -> Self {
        let t = tensor.map(|v| v.clamp(-1.0, 1.0));
        ImageBuffer::from_tensor(t).expect("clamped tensor is a valid image")
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        ImageBuffer::from_tensor_clamped(Tensor::full([1, 3, height, width], value))
    }

    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(Error::InvalidInput("rgb buffer length mismatch".into()));
        }
        let t = Tensor::from_fn([1, 3, height, width], |[_, c, y, x]| {
            rgb[(y * width + x) * 3 + c] as f64 / 127.5 - 1.0
        });
        ImageBuffer::from_tensor(t)
    }

    /// Rounds to the nearest 8-bit level, so that PNG storage is lossless.
    pub fn quantized(&self) -> Self {
        let (h, w) = self.size();
        ImageBuffer::from_rgb8(h, w, &self.to_rgb8()).expect("buffer of matching size")
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        let (h, w) = self.size();
        let mut out = vec![0u8; h * w * 3];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = (self.tensor.at(0, c, y, x) + 1.0) * 127.5;
                    out[(y * w + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        out
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn height(&self) -> usize {
        self.tensor.height()
    }

    pub fn width(&self) -> usize {
        self.tensor.width()
    }

    pub fn channels(&self) -> usize {
        3
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// Sub-image; the region must lie inside the image.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height() || left + width > self.width() || height == 0 || width == 0
        {
            return Err(Error::Geometry(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        Ok(ImageBuffer {
            tensor: self.tensor.window(top as isize, left as isize, height, width),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        ImageBuffer::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw())
    }

    pub fn from_encoded(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| Error::Image(e.to_string()))?
            .to_rgb8();
        ImageBuffer::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw())
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let (h, w) = self.size();
        let img = image::RgbImage::from_raw(w as u32, h as u32, self.to_rgb8())
            .expect("buffer sized from image dimensions");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        out.into_inner()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Luma in `[0, 255]` (BT.601 weights), row-major.
    pub fn to_gray255(&self) -> Vec<f64> {
        let (h, w) = self.size();
        let t = &self.tensor;
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let r = (t.at(0, 0, y, x) + 1.0) * 127.5;
                let g = (t.at(0, 1, y, x) + 1.0) * 127.5;
                let b = (t.at(0, 2, y, x) + 1.0) * 127.5;
                out.push(0.299 * r + 0.587 * g + 0.114 * b);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// Keys cubic (a = -0.5), widened when downsampling.
    Bicubic,
    /// Two-tap linear interpolation, half-pixel centers, no prefilter.
    Bilinear,
}

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

type Taps = Vec<(usize, f64)>;

fn build_taps(src: usize, dst: usize, kernel: Kernel) -> Vec<Taps> {
    let scale = dst as f64 / src as f64;
    let (support, stretch) = match kernel {
        Kernel::Bicubic => (2.0, if scale < 1.0 { 1.0 / scale } else { 1.0 }),
        Kernel::Bilinear => (1.0, 1.0),
    };
    let reach = support * stretch;
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - reach).floor() as isize;
            let hi = (center + reach).ceil() as isize;
            let mut taps: Taps = Vec::new();
            for j in lo..=hi {
                let d = (center - j as f64) / stretch;
                let wgt = match kernel {
                    Kernel::Bicubic => cubic(d),
                    Kernel::Bilinear => (1.0 - d.abs()).max(0.0),
                };
                if wgt == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, src as isize - 1) as usize;
                match taps.iter_mut().find(|(i, _)| *i == idx) {
                    Some(t) => t.1 += wgt,
                    None => taps.push((idx, wgt)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Precomputed separable resampling from one size to another.
#[derive(Clone, Debug)]
pub struct Resampler {
    src: (usize, usize),
    dst: (usize, usize),
    rows: Vec<Taps>,
    cols: Vec<Taps>,
}

impl Resampler {
    pub fn new(src: (usize, usize), dst: (usize, usize), kernel: Kernel) -> Self {
        Resampler {
            src,
            dst,
            rows: build_taps(src.0, dst.0, kernel),
            cols: build_taps(src.1, dst.1, kernel),
        }
    }

    pub fn dst(&self) -> (usize, usize) {
        self.dst
    }

    fn support(taps: &[Taps], out: Range<usize>) -> Range<usize> {
        let mut lo = usize::MAX;
        let mut hi = 0;
        for t in &taps[out] {
            for &(i, _) in t {
                lo = lo.min(i);
                hi = hi.max(i + 1);
            }
        }
        lo..hi
    }

    /// Source rows and columns that output region `rows × cols` reads.
    pub fn source_region(&self, rows: Range<usize>, cols: Range<usize>) -> (Range<usize>, Range<usize>) {
        (
            Self::support(&self.rows, rows),
            Self::support(&self.cols, cols),
        )
    }

    /// Output region `rows × cols` computed from `src`, a window of the full
    /// source whose top-left pixel sits at `origin`. The window must cover
    /// [`Self::source_region`].
    pub fn apply_region(
        &self,
        src: &Tensor,
        origin: (usize, usize),
        rows: Range<usize>,
        cols: Range<usize>,
    ) -> Tensor {
        let [n, c, sh, sw] = src.shape();
        let (nr, nc) = (rows.len(), cols.len());
        // vertical pass
        let mut tmp = Tensor::zeros([n, c, nr, sw]);
        for ni in 0..n {
            for ci in 0..c {
                for (ro, oy) in rows.clone().enumerate() {
                    let dst = tmp.offset(ni, ci, ro, 0);
                    for &(iy, wgt) in &self.rows[oy] {
                        let ly = iy - origin.0;
                        debug_assert!(ly < sh, "source window misses row {iy}");
                        let s = src.offset(ni, ci, ly, 0);
                        let (a, b) = (dst, s);
                        for x in 0..sw {
                            let v = src.data()[b + x];
                            tmp.data_mut()[a + x] += wgt * v;
                        }
                    }
                }
            }
        }
        // horizontal pass
        let mut out = Tensor::zeros([n, c, nr, nc]);
        for ni in 0..n {
            for ci in 0..c {
                for ro in 0..nr {
                    let base = tmp.offset(ni, ci, ro, 0);
                    for (co, ox) in cols.clone().enumerate() {
                        let mut acc = 0.0;
                        for &(ix, wgt) in &self.cols[ox] {
                            acc += wgt * tmp.data()[base + ix - origin.1];
                        }
                        out.set(ni, ci, ro, co, acc);
                    }
                }
            }
        }
        out
    }

    pub fn apply(&self, src: &Tensor) -> Tensor {
        assert_eq!((src.height(), src.width()), self.src, "resampler source size");
        if self.src == self.dst {
            return src.clone();
        }
        self.apply_region(src, (0, 0), 0..self.dst.0, 0..self.dst.1)
    }
}

/// Resamples any `[n, c, h, w]` tensor; same-size input is returned unchanged.
pub fn resample_tensor(t: &Tensor, target: (usize, usize), kernel: Kernel) -> Tensor {
    let src = (t.height(), t.width());
    if src == target {
        return t.clone();
    }
    Resampler::new(src, target, kernel).apply(t)
}

/// Bicubic resample of an image, clamped back into `[-1, 1]`.
pub fn resample(img: &ImageBuffer, target: (usize, usize)) -> Result<ImageBuffer> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::InvalidInput(format!("resample target {target:?}")));
    }
    if img.size() == target {
        return Ok(img.clone());
    }
    let t = resample_tensor(img.tensor(), target, Kernel::Bicubic);
    Ok(ImageBuffer::from_tensor_clamped(t))
}

/// The pyramid of image sizes, finest (index 0) to coarsest (index n).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePlan {
    pub scale_factor: f64,
    pub min_dim: usize,
    pub max_dim: usize,
    pub crop_window: Option<usize>,
    pub sizes: Vec<(usize, usize)>,
    pub crops: Vec<Option<(usize, usize)>>,
}

/// Size after shrinking so the larger side is at most `max_dim`; never enlarges.
pub fn fit_to_max_dim(size: (usize, usize), max_dim: usize) -> (usize, usize) {
    let (h, w) = size;
    let big = h.max(w);
    if big <= max_dim {
        return size;
    }
    let s = max_dim as f64 / big as f64;
    (
        ((h as f64 * s).round() as usize).max(1),
        ((w as f64 * s).round() as usize).max(1),
    )
}

fn level_size(base: (usize, usize), r: f64, i: usize) -> (usize, usize) {
    let f = r.powi(i as i32);
    (
        ((base.0 as f64 * f).round() as usize).max(1),
        ((base.1 as f64 * f).round() as usize).max(1),
    )
}

fn crop_for(size: (usize, usize), crop_window: Option<usize>) -> Option<(usize, usize)> {
    let cw = crop_window?;
    (size.0.max(size.1) > cw).then(|| (size.0.min(cw), size.1.min(cw)))
}

pub fn build_scale_plan(
    full_size: (usize, usize),
    r: f64,
    min_dim: usize,
    max_dim: usize,
    crop_window: Option<usize>,
) -> Result<ScalePlan> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidInput(format!("scale factor {r} not in (0, 1)")));
    }
    if min_dim == 0 || min_dim > max_dim {
        return Err(Error::InvalidInput(format!(
            "need 0 < min_dim <= max_dim, got {min_dim} and {max_dim}"
        )));
    }
    let base = fit_to_max_dim(full_size, max_dim);
    let short = base.0.min(base.1);
    if short < min_dim {
        return Err(Error::InvalidInput(format!(
            "image {}x{} is smaller than min_dim {min_dim}",
            base.0, base.1
        )));
    }
    // Deepest level whose shorter side still reaches min_dim.
    let levels = ((min_dim as f64 / short as f64).ln() / r.ln() + 1e-9).floor() as usize;
    let sizes: Vec<_> = (0..=levels).map(|i| level_size(base, r, i)).collect();
    for pair in sizes.windows(2) {
        if pair[1].0 >= pair[0].0 || pair[1].1 >= pair[0].1 {
            return Err(Error::InvalidInput(format!(
                "scale factor {r} does not shrink {:?} to a strictly smaller level",
                pair[0]
            )));
        }
    }
    let crops = sizes.iter().map(|&s| crop_for(s, crop_window)).collect();
    Ok(ScalePlan {
        scale_factor: r,
        min_dim,
        max_dim,
        crop_window,
        sizes,
        crops,
    })
}

impl ScalePlan {
    pub fn num_scales(&self) -> usize {
        self.sizes.len()
    }

    pub fn coarsest(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn size(&self, i: usize) -> (usize, usize) {
        self.sizes[i]
    }

    pub fn crop(&self, i: usize) -> Option<(usize, usize)> {
        self.crops[i]
    }

    pub fn full_size(&self) -> (usize, usize) {
        self.sizes[0]
    }

    /// Per-level sizes for an arbitrary output size under this plan's ratio.
    pub fn sizes_for_output(&self, out: (usize, usize)) -> Vec<(usize, usize)> {
        (0..self.num_scales())
            .map(|i| level_size(out, self.scale_factor, i))
            .collect()
    }

    /// The training image at every level (index 0 = finest).
    pub fn pyramid(&self, img: &ImageBuffer) -> Result<Vec<ImageBuffer>> {
        self.sizes.iter().map(|&s| resample(img, s)).collect()
    }
}

/// A core window plus the halo added around it on every side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub halo: usize,
}

impl CropWindow {
    pub fn full(size: (usize, usize), halo: usize) -> Self {
        CropWindow {
            top: 0,
            left: 0,
            height: size.0,
            width: size.1,
            halo,
        }
    }

    pub fn rows(&self) -> Range<usize> {
        self.top..self.top + self.height
    }

    pub fn cols(&self) -> Range<usize> {
        self.left..self.left + self.width
    }

    pub fn fits(&self, size: (usize, usize)) -> bool {
        self.height > 0 && self.width > 0 && self.top + self.height <= size.0 && self.left + self.width <= size.1
    }
}

/// The window grown by its halo; pixels past the tensor border are zero.
pub fn crop_with_halo(t: &Tensor, win: &CropWindow) -> Result<Tensor> {
    let size = (t.height(), t.width());
    if !win.fits(size) {
        return Err(Error::Geometry(format!(
            "core window {win:?} outside {}x{}",
            size.0, size.1
        )));
    }
    let h = win.halo as isize;
    Ok(t.window(
        win.top as isize - h,
        win.left as isize - h,
        win.height + 2 * win.halo,
        win.width + 2 * win.halo,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plan_160_halving_has_four_levels() {
        let p = build_scale_plan((160, 160), 0.5, 20, 160, None).unwrap();
        assert_eq!(p.sizes, vec![(160, 160), (80, 80), (40, 40), (20, 20)]);
        // closed form: log(20/160)/log(0.5) = 3 levels below the finest
        let n = ((20.0f64 / 160.0).ln() / 0.5f64.ln()).round() as usize;
        assert_eq!(p.num_scales(), n + 1);
    }

    #[test]
    fn plan_degenerate_single_level() {
        let p = build_scale_plan((64, 64), 0.5, 64, 64, None).unwrap();
        assert_eq!(p.sizes, vec![(64, 64)]);
    }

    #[test]
    fn plan_crops_only_large_levels() {
        let p = build_scale_plan((400, 660), 0.75, 25, 660, Some(256)).unwrap();
        for (s, c) in p.sizes.iter().zip(&p.crops) {
            assert_eq!(c.is_some(), s.0.max(s.1) > 256, "{s:?}");
            if let Some(c) = c {
                assert_eq!(*c, (s.0.min(256), s.1.min(256)));
            }
        }
        assert!(p.crops[0].is_some());
        assert!(p.crops[p.coarsest()].is_none());
    }

    #[test]
    fn plan_rejects_small_images_and_bad_ratio() {
        assert!(build_scale_plan((10, 40), 0.75, 25, 250, None).is_err());
        assert!(build_scale_plan((100, 100), 1.0, 25, 250, None).is_err());
        assert!(build_scale_plan((100, 100), 0.0, 25, 250, None).is_err());
    }

    #[test]
    fn plan_shrinks_large_images_first() {
        let p = build_scale_plan((500, 1000), 0.75, 25, 250, None).unwrap();
        assert_eq!(p.full_size(), (125, 250));
        let last = p.size(p.coarsest());
        assert!(last.0.min(last.1) >= 25);
    }

    #[test]
    fn resample_constant_is_constant() {
        let img = ImageBuffer::constant(13, 17, 0.3);
        for target in [(5, 7), (13, 17), (40, 29), (1, 1)] {
            let out = resample(&img, target).unwrap();
            assert_eq!(out.size(), target);
            assert!(out.tensor().data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        }
    }

    #[test]
    fn resample_same_size_is_bit_identical() {
        let t = Tensor::from_fn([1, 3, 9, 11], |[_, c, y, x]| ((c + y * x) as f64 * 0.13).sin());
        let img = ImageBuffer::from_tensor(t).unwrap();
        assert_eq!(resample(&img, (9, 11)).unwrap(), img);
    }

    #[test]
    fn smooth_ramp_survives_up_then_down() {
        let (h, w) = (32, 40);
        let t = Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
            let u = x as f64 / (w - 1) as f64;
            let v = y as f64 / (h - 1) as f64;
            0.6 * (u - 0.5) + 0.3 * (v - 0.5) + 0.1 * c as f64
        });
        let img = ImageBuffer::from_tensor(t).unwrap();
        let up = resample(&img, (64, 80)).unwrap();
        let back = resample(&up, (h, w)).unwrap();
        // Away from the replicated border the ramp is reproduced.
        let mut worst: f64 = 0.0;
        for c in 0..3 {
            for y in 2..h - 2 {
                for x in 2..w - 2 {
                    worst = worst.max((back.tensor().at(0, c, y, x) - img.tensor().at(0, c, y, x)).abs());
                }
            }
        }
        assert!(worst < 1e-2, "round trip error {worst}");
    }

    #[test]
    fn region_resample_matches_full() {
        let src = Tensor::from_fn([2, 3, 20, 23], |[n, c, y, x]| ((n * 31 + c * 7 + y * 3 + x) as f64 * 0.37).sin());
        for (dst, kernel) in [((27, 31), Kernel::Bicubic), ((15, 17), Kernel::Bicubic), ((27, 31), Kernel::Bilinear)] {
            let rs = Resampler::new((20, 23), dst, kernel);
            let full = rs.apply(&src);
            let (rows, cols) = (4..13, 6..dst.1);
            let (sr, sc) = rs.source_region(rows.clone(), cols.clone());
            let sub = src.window(sr.start as isize, sc.start as isize, sr.len(), sc.len());
            let part = rs.apply_region(&sub, (sr.start, sc.start), rows.clone(), cols.clone());
            let expect = full.window(rows.start as isize, cols.start as isize, rows.len(), cols.len());
            assert_eq!(part, expect);
        }
    }

    #[test]
    fn crop_with_halo_corner_band_is_zero() {
        let t = Tensor::full([1, 2, 256, 256], 1.0);
        let win = CropWindow { top: 0, left: 0, height: 128, width: 128, halo: 5 };
        let out = crop_with_halo(&t, &win).unwrap();
        assert_eq!(out.shape(), [1, 2, 138, 138]);
        for c in 0..2 {
            for i in 0..138 {
                for b in 0..5 {
                    assert_eq!(out.at(0, c, b, i), 0.0);
                    assert_eq!(out.at(0, c, i, b), 0.0);
                }
            }
        }
        assert_eq!(out.at(0, 0, 5, 5), 1.0);
    }

    #[test]
    fn crop_with_halo_interior_and_identity() {
        let t = Tensor::full([1, 3, 256, 256], 1.0);
        let win = CropWindow { top: 60, left: 70, height: 128, width: 128, halo: 5 };
        let out = crop_with_halo(&t, &win).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
        let img = Tensor::from_fn([1, 3, 8, 9], |[_, c, y, x]| (c * 100 + y * 10 + x) as f64);
        let same = crop_with_halo(&img, &CropWindow::full((8, 9), 0)).unwrap();
        assert_eq!(same, img);
        let bad = CropWindow { top: 250, left: 0, height: 128, width: 128, halo: 5 };
        assert!(matches!(crop_with_halo(&t, &bad), Err(Error::Geometry(_))));
    }

    /// Explicit zero-pad followed by a plain slice.
    fn pad_then_slice(t: &Tensor, win: &CropWindow) -> Tensor {
        let [n, c, h, w] = t.shape();
        let p = win.halo;
        let padded = Tensor::from_fn([n, c, h + 2 * p, w + 2 * p], |[ni, ci, y, x]| {
            if y < p || x < p || y >= h + p || x >= w + p {
                0.0
            } else {
                t.at(ni, ci, y - p, x - p)
            }
        });
        Tensor::from_fn([n, c, win.height + 2 * p, win.width + 2 * p], |[ni, ci, y, x]| {
            padded.at(ni, ci, win.top + y, win.left + x)
        })
    }

    proptest! {
        #[test]
        fn crop_with_halo_equals_pad_then_slice(
            h in 1usize..12, w in 1usize..12, halo in 0usize..5,
            fy in 0.0f64..1.0, fx in 0.0f64..1.0, fh in 0.0f64..1.0, fw in 0.0f64..1.0,
        ) {
            let t = Tensor::from_fn([1, 2, h, w], |[_, c, y, x]| (c * 1000 + y * 31 + x) as f64 + 0.5);
            let wh = 1 + ((h - 1) as f64 * fh) as usize;
            let ww = 1 + ((w - 1) as f64 * fw) as usize;
            let top = ((h - wh) as f64 * fy) as usize;
            let left = ((w - ww) as f64 * fx) as usize;
            let win = CropWindow { top, left, height: wh, width: ww, halo };
            prop_assert_eq!(crop_with_halo(&t, &win).unwrap(), pad_then_slice(&t, &win));
        }

        #[test]
        fn plan_sizes_are_reproduced_by_resampling(side in 30usize..200, r in 0.5f64..0.85) {
            let plan = build_scale_plan((side, side + 7), r, 20, 400, Some(128)).unwrap();
            let img = ImageBuffer::constant(side, side + 7, 0.1);
            let pyr = plan.pyramid(&img).unwrap();
            for (level, s) in pyr.iter().zip(&plan.sizes) {
                prop_assert_eq!(level.size(), *s);
            }
            let last = plan.size(plan.coarsest());
            prop_assert!(last.0.min(last.1) >= 20);
        }
    }
}

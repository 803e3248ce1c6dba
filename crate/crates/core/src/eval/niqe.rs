//! NIQE: distance of an image's natural-scene statistics from a pristine
//! multivariate Gaussian. Follows the scikit-video implementation, including
//! its PIL-style half-size bicubic resize and feature ordering.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::pyramid::ImageBuffer;

pub const FEATURES: usize = 36;

#[derive(Clone, Debug, PartialEq)]
pub struct NiqeModel {
    pub patch_size: usize,
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Deserialize)]
struct RawModel {
    patch_size: usize,
    mu: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl NiqeModel {
    /// Reads `{"patch_size", "mu": [36], "cov": [[36] x 36]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Config(format!(
                    "NIQE coefficient file {} not found; set niqe_model or skip the metric",
                    path.display()
                ))
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawModel = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if raw.mu.len() != FEATURES || raw.cov.len() != FEATURES || raw.cov.iter().any(|r| r.len() != FEATURES) {
            return Err(Error::Config(format!("NIQE model must be {FEATURES}-dimensional")));
        }
        if raw.patch_size < 4 || raw.patch_size % 2 != 0 {
            return Err(Error::Config("NIQE patch size must be even".into()));
        }
        Ok(NiqeModel {
            patch_size: raw.patch_size,
            mu: DVector::from_vec(raw.mu),
            cov: DMatrix::from_fn(FEATURES, FEATURES, |i, j| raw.cov[i][j]),
        })
    }

    /// Smallest side accepted by [`niqe`].
    pub fn min_side(&self) -> usize {
        2 * self.patch_size + 2
    }
}

fn gauss_window() -> [f64; 7] {
    let sd = (7.0f32 / 6.0) as f64;
    let sd2 = sd * sd;
    let mut w = [0.0; 7];
    w[3] = 1.0;
    let mut sum = 1.0;
    for i in 1..=3 {
        let t = (-0.5 * (i * i) as f64 / sd2).exp();
        w[3 + i] = t;
        w[3 - i] = t;
        sum += 2.0 * t;
    }
    w.map(|v| v / sum)
}

/// Separable 7-tap Gaussian with zero extension.
fn blur(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gauss_window();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yy = y as isize + t as isize - 3;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * img[yy as usize * w + x];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xx = x as isize + t as isize - 3;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * tmp[y * w + xx as usize];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Mean-subtracted contrast-normalized coefficients.
pub fn mscn(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mu = blur(img, h, w);
    let sq: Vec<f64> = img.iter().map(|v| v * v).collect();
    let m2 = blur(&sq, h, w);
    img.iter()
        .zip(mu.iter().zip(&m2))
        .map(|(v, (m, s))| (v - m) / ((s - m * m).abs().sqrt() + 1.0))
        .collect()
}

fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * a
    } else {
        0.0
    }
}

/// PIL's resampling coefficients for one axis.
fn pil_coeffs(in_size: usize, out_size: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = in_size as f64 / out_size as f64;
    let fscale = scale.max(1.0);
    let support = 2.0 * fscale;
    (0..out_size)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let xmin = ((center - support + 0.5) as isize).max(0) as usize;
            let xmax = ((center + support + 0.5) as isize).min(in_size as isize) as usize;
            let mut k: Vec<f64> = (xmin..xmax)
                .map(|x| cubic((x as f64 - center + 0.5) / fscale))
                .collect();
            let s: f64 = k.iter().sum();
            if s != 0.0 {
                k.iter_mut().for_each(|v| *v /= s);
            }
            (xmin, k)
        })
        .collect()
}

/// Bicubic resize as done by PIL on float images: horizontal pass, then vertical.
pub fn pil_resize(img: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let cx = pil_coeffs(w, ow);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for (x, (x0, k)) in cx.iter().enumerate() {
            tmp[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * img[y * w + x0 + i]).sum();
        }
    }
    let cy = pil_coeffs(h, oh);
    let mut out = vec![0.0; oh * ow];
    for (y, (y0, k)) in cy.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[(y0 + i) * ow + x]).sum();
        }
    }
    out
}

struct GammaTable {
    alphas: Vec<f64>,
    ratios: Vec<f64>,
}

fn gamma_table() -> &'static GammaTable {
    static T: OnceLock<GammaTable> = OnceLock::new();
    T.get_or_init(|| {
        let alphas: Vec<f64> = (0..9800).map(|i| 0.2 + i as f64 * 0.001).collect();
        let ratios = alphas
            .iter()
            .map(|&a| {
                let g2 = gamma(2.0 / a);
                g2 * g2 / (gamma(1.0 / a) * gamma(3.0 / a))
            })
            .collect();
        GammaTable { alphas, ratios }
    })
}

/// Asymmetric generalized Gaussian fit: `(alpha, mean, left scale, right scale)`.
pub fn aggd_features(v: &[f64]) -> (f64, f64, f64, f64) {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for &x in v {
        let s = x * x;
        if x < 0.0 {
            ls += s;
            ln += 1;
        } else {
            rs += s;
            rn += 1;
        }
        abs_sum += x.abs();
        sq_sum += s;
    }
    let left = if ln > 0 { (ls / ln as f64).sqrt() } else { 0.0 };
    let right = if rn > 0 { (rs / rn as f64).sqrt() } else { 0.0 };
    let gamma_hat = if right != 0.0 { left / right } else { f64::INFINITY };
    let n = v.len() as f64;
    let r_hat = if sq_sum != 0.0 {
        (abs_sum / n).powi(2) / (sq_sum / n)
    } else {
        f64::INFINITY
    };
    let rhat_norm = r_hat * ((gamma_hat.powi(3) + 1.0) * (gamma_hat + 1.0)) / (gamma_hat.powi(2) + 1.0).powi(2);
    let t = gamma_table();
    let mut pos = 0;
    if rhat_norm.is_finite() {
        let mut best = f64::INFINITY;
        for (i, r) in t.ratios.iter().enumerate() {
            let d = (r - rhat_norm).powi(2);
            if d < best {
                best = d;
                pos = i;
            }
        }
    }
    let alpha = t.alphas[pos];
    let (g1, g2, g3) = (gamma(1.0 / alpha), gamma(2.0 / alpha), gamma(3.0 / alpha));
    let ratio = g1.sqrt() / g3.sqrt();
    let (bl, br) = (ratio * left, ratio * right);
    (alpha, (br - bl) * (g2 / g1), bl, br)
}

/// The 18 subband features of one MSCN patch.
fn patch_features(p: &[f64], s: usize) -> [f64; 18] {
    let (alpha, _, bl, br) = aggd_features(p);
    let at = |y: usize, x: usize| p[(y % s) * s + (x % s)];
    // products with the horizontal, vertical and two diagonal neighbours,
    // rolled cyclically
    let shifted = |dy: usize, dx: usize| -> Vec<f64> {
        (0..s * s)
            .map(|i| {
                let (y, x) = (i / s, i % s);
                p[i] * at(y + s - dy, x + s - dx)
            })
            .collect()
    };
    let h = aggd_features(&shifted(0, 1));
    let v = aggd_features(&shifted(1, 0));
    let d1 = aggd_features(&shifted(1, 1));
    let d2 = aggd_features(&shifted(1, s - 1));
    [
        alpha,
        (bl + br) / 2.0,
        h.0, h.1, h.2, h.3,
        v.0, v.1, v.2, v.3,
        d1.0, d1.1, d1.2, d1.2,
        d2.0, d2.1, d2.2, d2.2,
    ]
}

fn level_features(img: &[f64], h: usize, w: usize, patch: usize) -> Vec<[f64; 18]> {
    let mut out = vec![];
    let mut buf = vec![0.0; patch * patch];
    for y0 in (0..=h - patch).step_by(patch) {
        for x0 in (0..=w - patch).step_by(patch) {
            for y in 0..patch {
                buf[y * patch..(y + 1) * patch].copy_from_slice(&img[(y0 + y) * w + x0..(y0 + y) * w + x0 + patch]);
            }
            out.push(patch_features(&buf, patch));
        }
    }
    out
}

/// Per-patch 36-dimensional features of a grayscale image in `[0, 255]`.
pub fn niqe_features(gray: &[f64], h: usize, w: usize, patch: usize) -> Result<DMatrix<f64>> {
    if h < patch || w < patch || gray.len() != h * w {
        return Err(Error::InvalidInput(format!("image {h}x{w} smaller than a {patch} patch")));
    }
    let (ch, cw) = (h - h % patch, w - w % patch);
    let img: Vec<f64> = (0..ch).flat_map(|y| gray[y * w..y * w + cw].iter().copied()).collect();
    let half = pil_resize(&img, ch, cw, ch / 2, cw / 2);
    let f1 = level_features(&mscn(&img, ch, cw), ch, cw, patch);
    let f2 = level_features(&mscn(&half, ch / 2, cw / 2), ch / 2, cw / 2, patch / 2);
    Ok(DMatrix::from_fn(f1.len(), FEATURES, |r, c| {
        if c < 18 {
            f1[r][c]
        } else {
            f2[r][c - 18]
        }
    }))
}

/// Moore-Penrose inverse with numpy's default cutoff.
fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let cutoff = 1e-15 * svd.singular_values.max();
    let s_inv = svd.singular_values.map(|s| if s > cutoff { 1.0 / s } else { 0.0 });
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    vt.transpose() * DMatrix::from_diagonal(&s_inv) * u.transpose()
}

pub fn niqe_gray(gray: &[f64], h: usize, w: usize, model: &NiqeModel) -> Result<f64> {
    if h < model.min_side() || w < model.min_side() {
        return Err(Error::TooSmall {
            got: h.min(w),
            rf: model.min_side(),
        });
    }
    let feats = niqe_features(gray, h, w, model.patch_size)?;
    let n = feats.nrows() as f64;
    let mu = DVector::from_iterator(FEATURES, feats.column_iter().map(|c| c.mean()));
    let mut centered = feats.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1.0);
    let x = &mu - &model.mu;
    let p = pinv(&((&model.cov + cov) / 2.0));
    let d = (x.transpose() * p * &x)[(0, 0)];
    if !d.is_finite() {
        return Err(Error::Numeric("NIQE is not finite".into()));
    }
    Ok(d.max(0.0).sqrt())
}

/// NIQE of the image's BT.601 luma; lower is more natural.
pub fn niqe(img: &ImageBuffer, model: &NiqeModel) -> Result<f64> {
    let (h, w) = img.size();
    niqe_gray(&img.to_gray255(), h, w, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_sums_to_one() {
        let w = gauss_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[0], w[6]);
    }

    #[test]
    fn pil_half_resize_preserves_constants() {
        let img = vec![7.0; 12 * 10];
        let out = pil_resize(&img, 12, 10, 6, 5);
        assert!(out.iter().all(|v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn aggd_of_symmetric_gaussianish_data() {
        // a symmetric sample: equal scales, zero mean parameter
        let v: Vec<f64> = (0..2000).map(|i| ((i as f64 + 0.5) / 2000.0 - 0.5) * 2.0).collect();
        let (alpha, mean, bl, br) = aggd_features(&v);
        assert!((bl - br).abs() < 1e-9);
        assert!(mean.abs() < 1e-9);
        // a uniform distribution has a large shape parameter
        assert!(alpha > 4.0, "{alpha}");
    }
}

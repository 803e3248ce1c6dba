//! Feature extractors for single-image Frechet distances.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::noise::substream;
use crate::pyramid::ImageBuffer;
use crate::tensor::{conv2d, Tensor};

pub trait FeatureExtractor: Send + Sync {
    /// A `[1, d, h', w']` feature map.
    fn features(&self, img: &ImageBuffer) -> Result<Tensor>;
    fn dim(&self) -> usize;
}

/// A fixed random 1x1 projection of RGB: the offline stand-in used by tests
/// and the experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct StubExtractor {
    /// `[d, 3]` row-major.
    pub weight: Vec<f64>,
    pub dim: usize,
}

impl StubExtractor {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = substream(seed, &[0x5eed_f00d, dim as u64]);
        let weight = (0..dim * 3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        StubExtractor { weight, dim }
    }
}

impl Default for StubExtractor {
    fn default() -> Self {
        StubExtractor::new(8, 0)
    }
}

impl FeatureExtractor for StubExtractor {
    fn features(&self, img: &ImageBuffer) -> Result<Tensor> {
        let t = img.tensor();
        let (h, w) = img.size();
        Ok(Tensor::from_fn([1, self.dim, h, w], |[_, d, y, x]| {
            (0..3).map(|c| self.weight[d * 3 + c] * t.at(0, c, y, x)).sum()
        }))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// One layer of a [`ConvExtractor`].
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        /// `[out, in, kh, kw]`.
        shape: [usize; 4],
        weight: Vec<f64>,
        bias: Vec<f64>,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ConvExtractor {
    /// Per-channel input normalization applied to `[0, 1]` RGB.
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub layers: Vec<Layer>,
}

impl ConvExtractor {
    /// Reads a JSON export such as the stem of a pretrained classifier up to
    /// its first pooling layer (batch norm folded into the convolutions).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        let ex: ConvExtractor = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ch = 3;
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Conv { shape, weight, bias, stride, .. } => {
                    if shape[1] != ch || weight.len() != shape.iter().product::<usize>() || bias.len() != shape[0] || *stride == 0 {
                        return Err(Error::Config(format!("layer {i}: inconsistent convolution")));
                    }
                    ch = shape[0];
                }
                Layer::MaxPool { size, stride } if *size == 0 || *stride == 0 => {
                    return Err(Error::Config(format!("layer {i}: empty pooling window")));
                }
                _ => {}
            }
        }
        if self.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }
}

fn subsample(t: &Tensor, stride: usize) -> Tensor {
    if stride == 1 {
        return t.clone();
    }
    let [n, c, h, w] = t.shape();
    Tensor::from_fn([n, c, h.div_ceil(stride), w.div_ceil(stride)], |[b, k, y, x]| {
        t.at(b, k, y * stride, x * stride)
    })
}

fn max_pool(t: &Tensor, size: usize, stride: usize) -> Result<Tensor> {
    let [n, c, h, w] = t.shape();
    if h < size || w < size {
        return Err(Error::TooSmall { got: h.min(w), rf: size });
    }
    let (oh, ow) = ((h - size) / stride + 1, (w - size) / stride + 1);
    Ok(Tensor::from_fn([n, c, oh, ow], |[b, k, y, x]| {
        let mut m = f64::NEG_INFINITY;
        for dy in 0..size {
            for dx in 0..size {
                m = m.max(t.at(b, k, y * stride + dy, x * stride + dx));
            }
        }
        m
    }))
}

impl FeatureExtractor for ConvExtractor {
    fn features(&self, img: &ImageBuffer) -> Result<Tensor> {
        let src = img.tensor();
        let mut x = Tensor::from_fn(src.shape(), |[_, c, y, xx]| {
            ((src.at(0, c, y, xx) + 1.0) / 2.0 - self.mean[c]) / self.std[c]
        });
        for l in &self.layers {
            x = match l {
                Layer::Conv { shape, weight, bias, stride, pad } => {
                    let padded = if *pad > 0 {
                        x.window(-(*pad as isize), -(*pad as isize), x.height() + 2 * pad, x.width() + 2 * pad)
                    } else {
                        x
                    };
                    if padded.height() < shape[2] || padded.width() < shape[3] {
                        return Err(Error::TooSmall { got: padded.height().min(padded.width()), rf: shape[2] });
                    }
                    let w = Tensor::new(*shape, weight.clone());
                    let mut y = subsample(&conv2d(&padded, &w), *stride);
                    let [_, c, h, ww] = y.shape();
                    for (k, b) in bias.iter().enumerate().take(c) {
                        for v in &mut y.data_mut()[k * h * ww..(k + 1) * h * ww] {
                            *v += b;
                        }
                    }
                    y
                }
                Layer::Relu => x.map(|v| v.max(0.0)),
                Layer::MaxPool { size, stride } => max_pool(&x, *size, *stride)?,
            };
        }
        Ok(x)
    }

    fn dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Conv { shape, .. } => Some(shape[0]),
                _ => None,
            })
            .unwrap_or(3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_is_a_pixelwise_projection() {
        let ex = StubExtractor::new(4, 3);
        let img = ImageBuffer::from_tensor_clamped(Tensor::from_fn([1, 3, 5, 6], |[_, c, y, x]| {
            ((c * 7 + y * 3 + x) as f64 * 0.37).sin()
        }));
        let f = ex.features(&img).unwrap();
        assert_eq!(f.shape(), [1, 4, 5, 6]);
        let (y, x) = (2, 4);
        for d in 0..4 {
            let want: f64 = (0..3).map(|c| ex.weight[d * 3 + c] * img.tensor().at(0, c, y, x)).sum();
            assert_eq!(f.at(0, d, y, x), want);
        }
        assert_eq!(StubExtractor::new(4, 3), ex);
        assert_ne!(StubExtractor::new(4, 4).weight, ex.weight);
    }

    #[test]
    fn conv_extractor_from_json() {
        let json = r#"{
            "mean": [0.5, 0.5, 0.5], "std": [0.5, 0.5, 0.5],
            "layers": [
                {"kind": "conv", "shape": [2, 3, 1, 1], "weight": [1, 0, 0, 0, 0, -1], "bias": [0.0, 1.0], "stride": 2, "pad": 1},
                {"kind": "relu"},
                {"kind": "max_pool", "size": 2, "stride": 2}
            ]
        }"#;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stem.json");
        std::fs::write(&p, json).unwrap();
        let ex = ConvExtractor::load(&p).unwrap();
        assert_eq!(ex.dim(), 2);
        let img = ImageBuffer::constant(6, 6, 0.5);
        // padded 8x8 -> stride 2 -> 4x4 -> pool -> 2x2
        let f = ex.features(&img).unwrap();
        assert_eq!(f.shape(), [1, 2, 2, 2]);
        // interior inputs normalize to 0.5; padded inputs leave only the bias
        assert!((f.at(0, 0, 1, 1) - 0.5).abs() < 1e-12);
        assert!((f.at(0, 1, 1, 1) - 0.5).abs() < 1e-12);
        assert!((f.at(0, 1, 0, 0) - 1.0).abs() < 1e-12);
        assert!(matches!(ConvExtractor::load(dir.path().join("none.json")), Err(Error::MissingFile(_))));
    }
}

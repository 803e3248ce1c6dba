//! Per-scale generator and critic, SPADE-style identity modulation, channel
//! schedule and receptive-field arithmetic.
//!
//! Parameters are stored as plain tensors so a trained model is `Send + Sync`;
//! a forward pass wraps them in [`Var`]s (trainable or constant) on demand.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_BLOCKS: usize = 3;
/// Head + blocks + tail, all 3×3.
pub const NUM_CONVS: usize = NUM_BLOCKS + 2;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

pub fn receptive_field(num_convs: usize) -> usize {
    1 + 2 * num_convs
}

pub fn halo(num_convs: usize) -> usize {
    (receptive_field(num_convs) - 1) / 2
}

/// Receptive field of every scale network.
pub const RF: usize = 1 + 2 * NUM_CONVS;
pub const HALO: usize = NUM_CONVS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchedule {
    pub base: usize,
    pub cap: usize,
    pub period: usize,
}

impl Default for ChannelSchedule {
    fn default() -> Self {
        ChannelSchedule {
            base: 32,
            cap: 512,
            period: 4,
        }
    }
}

impl ChannelSchedule {
    /// Width of the scale `i` levels above the coarsest (0 = coarsest).
    pub fn channels_for_scale(&self, i: usize) -> usize {
        let doublings = (i / self.period.max(1)).min(63) as u32;
        self.base.saturating_mul(1usize << doublings.min(usize::BITS - 1)).min(self.cap)
    }
}

pub fn channels_for_scale(i: usize) -> usize {
    ChannelSchedule::default().channels_for_scale(i)
}

/// Parameter-free normalization over the channels of each pixel.
///
/// Statistics never mix pixels, so a network built from it (and unpadded
/// convolutions) computes every output pixel from its receptive field alone.
pub fn normalize(x: &Var) -> Var {
    let [n, c, h, w] = x.shape();
    let mean = x.sum_to([n, 1, h, w]).scale(1.0 / c as f64);
    let centered = x.sub(&mean);
    let var = centered.square().sum_to([n, 1, h, w]).scale(1.0 / c as f64);
    centered.mul(&var.add_scalar(NORM_EPS).pow(-0.5))
}

fn conv(x: &Var, w: &Var, b: &Var) -> Var {
    x.conv2d(w).add(b)
}

/// Shapes of a generator's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub channels: usize,
    pub num_ids: usize,
    pub spade_hidden: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub channels: usize,
}

/// Offsets into a generator's flat parameter list.
const G_HEAD: usize = 0;
const G_BLOCK: usize = 2;
const G_PER_BLOCK: usize = 8;
const G_TAIL: usize = G_BLOCK + NUM_BLOCKS * G_PER_BLOCK;

impl GeneratorSpec {
    pub fn shapes(&self) -> Vec<[usize; 4]> {
        let (c, k, hd) = (self.channels, self.num_ids, self.spade_hidden);
        let mut s = vec![[c, 3, 3, 3], [1, c, 1, 1]];
        for _ in 0..NUM_BLOCKS {
            s.extend([
                [c, c, 3, 3],
                [1, c, 1, 1],
                [hd, k, 1, 1],
                [1, hd, 1, 1],
                [c, hd, 1, 1],
                [1, c, 1, 1],
                [c, hd, 1, 1],
                [1, c, 1, 1],
            ]);
        }
        s.extend([[3, c, 3, 3], [1, 3, 1, 1]]);
        s
    }

    /// Conv weights ~ N(0, 0.02), biases 0; γ starts at 1 and β at 0.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<Tensor> {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        self.shapes()
            .into_iter()
            .enumerate()
            .map(|(idx, shape)| {
                let in_block = idx >= G_BLOCK && idx < G_TAIL;
                let slot = (idx - G_BLOCK.min(idx)) % G_PER_BLOCK;
                if in_block && (slot == 4 || slot == 6) {
                    Tensor::zeros(shape)
                } else if in_block && slot == 5 {
                    Tensor::full(shape, 1.0)
                } else if shape[0] == 1 && shape[2] == 1 {
                    Tensor::zeros(shape)
                } else {
                    Tensor::from_fn(shape, |_| normal.sample(rng))
                }
            })
            .collect()
    }
}

impl DiscriminatorSpec {
    pub fn shapes(&self) -> Vec<[usize; 4]> {
        let c = self.channels;
        let mut s = vec![[c, 3, 3, 3], [1, c, 1, 1]];
        for _ in 0..NUM_BLOCKS {
            s.extend([[c, c, 3, 3], [1, c, 1, 1]]);
        }
        s.extend([[1, c, 3, 3], [1, 1, 1, 1]]);
        s
    }

    pub fn init(&self, rng: &mut impl Rng) -> Vec<Tensor> {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        self.shapes()
            .into_iter()
            .map(|shape| {
                if shape[0] == 1 && shape[2] == 1 {
                    Tensor::zeros(shape)
                } else {
                    Tensor::from_fn(shape, |_| normal.sample(rng))
                }
            })
            .collect()
    }
}

/// Wraps stored tensors as graph leaves.
pub fn as_vars(params: &[Tensor], trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|t| Var::leaf(t.clone(), trainable))
        .collect()
}

/// The parameters of one SPADE unit.
pub struct SpadeParams<'a> {
    pub shared_w: &'a Var,
    pub shared_b: &'a Var,
    pub gamma_w: &'a Var,
    pub gamma_b: &'a Var,
    pub beta_w: &'a Var,
    pub beta_b: &'a Var,
}

/// `γ(id) ⊙ normalize(features) + β(id)`; `id` must match the feature size.
pub fn spade_modulate(features: &Var, id: &Var, p: &SpadeParams<'_>) -> Result<Var> {
    let [n, _, h, w] = features.shape();
    let [ni, _, hi, wi] = id.shape();
    if (hi, wi) != (h, w) || (ni != n && ni != 1) {
        return Err(Error::InvalidInput(format!(
            "identity map {:?} does not match features {:?}",
            id.shape(),
            features.shape()
        )));
    }
    let hidden = conv(id, p.shared_w, p.shared_b).relu();
    let gamma = conv(&hidden, p.gamma_w, p.gamma_b);
    let beta = conv(&hidden, p.beta_w, p.beta_b);
    Ok(normalize(features).mul(&gamma).add(&beta))
}

fn check_size(h: usize, w: usize) -> Result<()> {
    if h.min(w) < RF {
        return Err(Error::TooSmall { got: h.min(w), rf: RF });
    }
    Ok(())
}

/// One scale's generator.
///
/// `input` is `z + prev_up` over the output window grown by [`HALO`] on each
/// side, `residual` is `prev_up` over the output window, and `id` is the
/// identity map over the same grown window as `input`. The output covers the
/// core window.
pub fn generator_forward(
    spec: &GeneratorSpec,
    params: &[Var],
    input: &Var,
    residual: &Var,
    id: &Var,
) -> Result<Var> {
    let [n, c_in, h, w] = input.shape();
    if c_in != 3 {
        return Err(Error::InvalidInput(format!("generator input has {c_in} channels")));
    }
    check_size(h, w)?;
    if params.len() != spec.shapes().len() {
        return Err(Error::InvalidInput("generator parameter count".into()));
    }
    let (oh, ow) = (h - (RF - 1), w - (RF - 1));
    if residual.shape() != [n, 3, oh, ow] {
        return Err(Error::Geometry(format!(
            "residual {:?} does not match output {:?}",
            residual.shape(),
            [n, 3, oh, ow]
        )));
    }
    let [ni, k, ih, iw] = id.shape();
    if (ih, iw) != (h, w) || k != spec.num_ids || (ni != n && ni != 1) {
        return Err(Error::InvalidInput(format!(
            "identity map {:?} does not match input {:?} with K = {}",
            id.shape(),
            input.shape(),
            spec.num_ids
        )));
    }
    let mut x = conv(input, &params[G_HEAD], &params[G_HEAD + 1]).leaky_relu(LEAKY_SLOPE);
    for b in 0..NUM_BLOCKS {
        let p = &params[G_BLOCK + b * G_PER_BLOCK..G_BLOCK + (b + 1) * G_PER_BLOCK];
        x = conv(&x, &p[0], &p[1]);
        let [_, _, fh, fw] = x.shape();
        let id_here = id.center_crop(fh, fw);
        let sp = SpadeParams {
            shared_w: &p[2],
            shared_b: &p[3],
            gamma_w: &p[4],
            gamma_b: &p[5],
            beta_w: &p[6],
            beta_b: &p[7],
        };
        x = spade_modulate(&x, &id_here, &sp)?.leaky_relu(LEAKY_SLOPE);
    }
    let out = conv(&x, &params[G_TAIL], &params[G_TAIL + 1]);
    Ok(out.add(residual).tanh())
}

/// Per-patch critic scores, `[n, 1, h - RF + 1, w - RF + 1]`.
pub fn discriminator_forward(params: &[Var], x: &Var) -> Result<Var> {
    let [_, c, h, w] = x.shape();
    if c != 3 {
        return Err(Error::InvalidInput(format!("critic input has {c} channels")));
    }
    check_size(h, w)?;
    if params.len() != 2 * NUM_CONVS {
        return Err(Error::InvalidInput("critic parameter count".into()));
    }
    let mut y = conv(x, &params[0], &params[1]).leaky_relu(LEAKY_SLOPE);
    for b in 0..NUM_BLOCKS {
        let i = 2 + 2 * b;
        y = normalize(&conv(&y, &params[i], &params[i + 1])).leaky_relu(LEAKY_SLOPE);
    }
    let t = 2 + 2 * NUM_BLOCKS;
    Ok(conv(&y, &params[t], &params[t + 1]))
}

/// Architecture of one pyramid level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleArch {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

pub fn param_count(shapes: &[[usize; 4]]) -> usize {
    shapes.iter().map(|s| s.iter().product::<usize>()).sum()
}

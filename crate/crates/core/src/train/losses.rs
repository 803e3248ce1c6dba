use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::autograd::{grad, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct CriticLoss {
    pub total: Var,
    /// `mean D(fake) − mean D(real)`.
    pub gap: f64,
    /// The weighted gradient penalty.
    pub gp: f64,
}

/// `λ · mean_s (‖∇ D̄(x̂_s)‖ − 1)²` with `x̂ = u·real + (1−u)·fake`, one `u` per
/// sample, where `D̄` averages the critic's score map.
pub fn gradient_penalty(
    critic: &dyn Fn(&Var) -> Result<Var>,
    real: &Tensor,
    fake: &Tensor,
    u: &[f64],
    lambda: f64,
) -> Result<Var> {
    let [n, c, h, w] = real.shape();
    if fake.shape() != real.shape() || u.len() != n {
        return Err(Error::InvalidInput(format!(
            "penalty needs matching batches, got {:?} / {:?} with {} mixing weights",
            real.shape(),
            fake.shape(),
            u.len()
        )));
    }
    let mix = Tensor::from_fn([n, c, h, w], |[s, ci, y, x]| {
        u[s] * real.at(s, ci, y, x) + (1.0 - u[s]) * fake.at(s, ci, y, x)
    });
    let xhat = Var::param(mix);
    let scores = critic(&xhat)?;
    let per_sample = scores.spatial_mean().sum_all();
    let g = grad(&per_sample, &[&xhat], true).remove(0);
    let norm = g.square().sum_to([n, 1, 1, 1]).sqrt();
    Ok(norm.add_scalar(-1.0).square().mean_all().scale(lambda))
}

/// WGAN-GP critic objective.
pub fn wgan_gp_d_loss(
    critic: &dyn Fn(&Var) -> Result<Var>,
    real: &Tensor,
    fake: &Tensor,
    lambda: f64,
    u: &[f64],
) -> Result<CriticLoss> {
    let n = real.shape()[0];
    let both = Var::constant(Tensor::stack(&[real.clone(), fake.clone()]));
    let scores = critic(&both)?;
    let [_, sc, sh, sw] = scores.shape();
    let per = 1.0 / (n * sc * sh * sw) as f64;
    let sign = Tensor::from_fn(scores.shape(), |[s, ..]| if s < n { -per } else { per });
    let gap = scores.masked(Rc::new(sign)).sum_all();
    let gp = gradient_penalty(critic, real, fake, u, lambda)?;
    let (gap_v, gp_v) = (gap.item(), gp.item());
    Ok(CriticLoss {
        total: gap.add(&gp),
        gap: gap_v,
        gp: gp_v,
    })
}

/// `−mean D(fake)`.
pub fn generator_adv_loss(scores: &Var) -> Var {
    scores.mean_all().neg()
}

/// Mean squared error against a constant target.
pub fn reconstruction_loss(out: &Var, target: &Tensor) -> Var {
    out.sub(&Var::constant(target.clone())).square().mean_all()
}

/// A differentiable image embedding, `[n, 3, h, w] -> [n, d, 1, 1]`.
pub trait Embedding {
    fn embed(&self, x: &Var) -> Var;
}

/// Per-channel global mean.
pub struct MeanPixel;

impl Embedding for MeanPixel {
    fn embed(&self, x: &Var) -> Var {
        x.spatial_mean()
    }
}

/// A fixed 1×1 projection followed by a global mean.
pub struct LinearProjection {
    pub weight: Tensor,
}

impl LinearProjection {
    pub fn random(dim: usize, rng: &mut impl Rng) -> Self {
        let d = rand_distr::Normal::new(0.0, 1.0).expect("valid std");
        LinearProjection {
            weight: Tensor::from_fn([dim, 3, 1, 1], |_| d.sample(rng)),
        }
    }
}

impl Embedding for LinearProjection {
    fn embed(&self, x: &Var) -> Var {
        x.conv2d(&Var::constant(self.weight.clone())).spatial_mean()
    }
}

/// `‖φ(generated) − Σ_k α_k φ(image_k)‖₁`, averaged over the batch.
pub fn semantic_blend_loss(
    generated: &Var,
    alpha: &[f64],
    images: &[Tensor],
    phi: &dyn Embedding,
) -> Result<Var> {
    if alpha.len() != images.len() {
        return Err(Error::InvalidInput(format!(
            "{} blend weights for {} images",
            alpha.len(),
            images.len()
        )));
    }
    crate::identity::blend_constant(alpha, (1, 1))?;
    let mut target: Option<Tensor> = None;
    for (a, img) in alpha.iter().zip(images) {
        let e = phi.embed(&Var::constant(img.clone())).value().map(|v| v * a);
        target = Some(match target {
            None => e,
            Some(t) => t.zip_with(&e, |p, q| p + q),
        });
    }
    let target = target.ok_or_else(|| Error::InvalidInput("no images".into()))?;
    let n = generated.shape()[0] as f64;
    let emb = phi.embed(generated);
    Ok(emb.sub(&Var::constant(target)).abs().sum_all().scale(1.0 / n))
}

/// A draw from the flat Dirichlet distribution.
pub fn dirichlet_ones(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

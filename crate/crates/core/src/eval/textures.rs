//! Procedural images for desk-scale runs, tests and experiments.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::noise::substream;
use crate::pyramid::ImageBuffer;
use crate::tensor::Tensor;

fn grain(seed: u64, size: (usize, usize), amount: f64) -> Vec<f64> {
    let mut rng = substream(seed, &[0x7e47, size.0 as u64, size.1 as u64]);
    (0..size.0 * size.1).map(|_| amount * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn build(size: (usize, usize), seed: u64, f: impl Fn(usize, f64, f64) -> f64) -> ImageBuffer {
    let g = grain(seed, size, 0.04);
    let (h, w) = size;
    ImageBuffer::from_tensor_clamped(Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
        f(c, y as f64, x as f64) + g[y * w + x]
    }))
}

/// Warm diagonal stripes.
pub fn stripes(size: (usize, usize), seed: u64) -> ImageBuffer {
    build(size, seed, |c, y, x| {
        let s = ((x + 0.6 * y) * 0.55).sin();
        let base = [0.55, 0.1, -0.6][c];
        let amp = [0.35, 0.45, 0.2][c];
        base + amp * s
    })
}

/// Cool blobs on a dark field.
pub fn spots(size: (usize, usize), seed: u64) -> ImageBuffer {
    build(size, seed, |c, y, x| {
        let s = (x * 0.45).sin() * (y * 0.45).cos();
        let base = [-0.6, -0.05, 0.45][c];
        let amp = [0.2, 0.5, 0.4][c];
        base + amp * s
    })
}

/// Grass-like vertical streaks in green.
pub fn streaks(size: (usize, usize), seed: u64) -> ImageBuffer {
    build(size, seed, |c, y, x| {
        let s = (x * 1.1 + (y * 0.15).sin() * 2.0).sin();
        let base = [-0.3, 0.35, -0.45][c];
        let amp = [0.15, 0.4, 0.1][c];
        base + amp * s
    })
}

/// Brick-like grid in earthy tones.
pub fn bricks(size: (usize, usize), seed: u64) -> ImageBuffer {
    build(size, seed, |c, y, x| {
        let row = (y / 8.0).floor();
        let xs = x + if row as i64 % 2 == 0 { 0.0 } else { 6.0 };
        let mortar = (y % 8.0) < 1.5 || (xs % 12.0) < 1.5;
        let base = if mortar { [0.4, 0.35, 0.3] } else { [0.25, -0.35, -0.5] };
        base[c]
    })
}

/// The textures in a fixed order; `k` wraps around.
pub fn texture(k: usize, size: (usize, usize), seed: u64) -> ImageBuffer {
    match k % 4 {
        0 => stripes(size, seed),
        1 => spots(size, seed),
        2 => streaks(size, seed),
        _ => bricks(size, seed),
    }
}

/// A wide scene whose palette and texture frequency drift steadily from left
/// to right, so crops further apart differ more.
pub fn toy_panorama(size: (usize, usize), seed: u64) -> ImageBuffer {
    let w = size.1 as f64;
    build(size, seed, |c, y, x| {
        let t = x / w;
        let warm = [0.55, 0.15, -0.55];
        let cool = [-0.55, 0.0, 0.55];
        let base = warm[c] * (1.0 - t) + cool[c] * t;
        let freq = 0.15 + 0.35 * t;
        base + 0.3 * (x * freq + y * 0.2).sin()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = texture(0, (16, 20), 1);
        assert_eq!(a, texture(0, (16, 20), 1));
        assert_ne!(a, texture(0, (16, 20), 2));
        assert_ne!(a, texture(1, (16, 20), 1));
        assert_eq!(a.size(), (16, 20));
        assert!(a.tensor().data().iter().all(|v| v.abs() <= 1.0));
        let p = toy_panorama((24, 120), 0);
        assert_eq!(p.size(), (24, 120));
    }
}

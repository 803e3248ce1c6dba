//! Random-access Gaussian noise fields.
//!
//! A field value depends only on `(seed, stream, channel, y, x)`, never on
//! the region that is requested, so noise for a crop is exactly the matching
//! window of the full-size draw. Each value consumes four ChaCha words (two
//! `u64`s for a Box–Muller pair) at a fixed word position.

use std::f64::consts::TAU;
use std::ops::Range;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub const NOISE_CHANNELS: usize = 3;

/// Stream purposes; keep values stable, they are part of the checkpoint format.
pub mod purpose {
    pub const RECONSTRUCTION: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SEMANTIC: u64 = 6;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream id from a list of integers.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// A seeded RNG for one purpose, independent of every other purpose.
pub fn substream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(parts));
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseField {
    pub seed: u64,
    pub stream: u64,
    pub size: (usize, usize),
    pub amplitude: f64,
}

fn unit_open(bits: u64) -> f64 {
    // (0, 1]
    ((bits >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

impl NoiseField {
    pub fn new(seed: u64, stream: u64, size: (usize, usize), amplitude: f64) -> Self {
        NoiseField {
            seed,
            stream,
            size,
            amplitude,
        }
    }

    /// Writes `amplitude · N(0, 1)` for channel `c`, row `y`, columns `xs`.
    fn fill_row(&self, rng: &mut ChaCha8Rng, c: usize, y: usize, xs: Range<usize>, out: &mut [f64]) {
        let (h, w) = self.size;
        let index = ((c * h + y) * w + xs.start) as u128;
        rng.set_word_pos(index * 4);
        for o in out.iter_mut().take(xs.len()) {
            let u1 = unit_open(rng.next_u64());
            let u2 = unit_open(rng.next_u64());
            *o = self.amplitude * (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
        }
    }

    /// `[1, 3, rows, cols]`; positions outside the field are zero.
    pub fn region(&self, rows: Range<isize>, cols: Range<isize>) -> Tensor {
        let (h, w) = self.size;
        let (rh, rw) = (rows.len(), cols.len());
        let mut t = Tensor::zeros([1, NOISE_CHANNELS, rh, rw]);
        if self.amplitude == 0.0 {
            return t;
        }
        let x0 = cols.start.max(0) as usize;
        let x1 = cols.end.clamp(0, w as isize) as usize;
        if x0 >= x1 {
            return t;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        let mut buf = vec![0.0; x1 - x0];
        for c in 0..NOISE_CHANNELS {
            for (ry, y) in rows.clone().enumerate() {
                if y < 0 || y >= h as isize {
                    continue;
                }
                self.fill_row(&mut rng, c, y as usize, x0..x1, &mut buf);
                let base = t.offset(0, c, ry, (x0 as isize - cols.start) as usize);
                t.data_mut()[base..base + buf.len()].copy_from_slice(&buf);
            }
        }
        t
    }

    pub fn full(&self) -> Tensor {
        self.region(0..self.size.0 as isize, 0..self.size.1 as isize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_is_window_of_full() {
        let f = NoiseField::new(11, stream_id(&[1, 2]), (9, 13), 0.5);
        let full = f.full();
        let part = f.region(-2..5, 3..17);
        assert_eq!(part, full.window(-2, 3, 7, 14));
    }

    #[test]
    fn statistics_are_standard_normal() {
        let f = NoiseField::new(3, 99, (100, 100), 1.0);
        let t = f.full();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn streams_and_seeds_differ() {
        let a = NoiseField::new(1, 5, (4, 4), 1.0).full();
        let b = NoiseField::new(1, 6, (4, 4), 1.0).full();
        let c = NoiseField::new(2, 5, (4, 4), 1.0).full();
        assert!(a.max_abs_diff(&b) > 0.1 && a.max_abs_diff(&c) > 0.1);
        assert_eq!(a, NoiseField::new(1, 5, (4, 4), 1.0).full());
        assert_ne!(stream_id(&[1, 2]), stream_id(&[2, 1]));
    }
}

//! Seeded random sampling.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DbaError, Result};
use crate::tensor::Tensor;

/// Deterministic generator: identical seed, identical stream.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to derive child seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(seed, index)`; used to fan out independent trials.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn child(seed: u64, index: u64) -> Self {
        Self::new(split_seed(seed, index))
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// `rows × cols` tensor of i.i.d. `N(0, variance)` entries.
    pub fn gaussian(&mut self, rows: usize, cols: usize, variance: f64) -> Result<Tensor> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(DbaError::Parameter(format!(
                "variance must be positive, got {variance}"
            )));
        }
        let sd = variance.sqrt();
        Ok(Tensor::from_fn(rows, cols, |_, _| sd * self.normal()))
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| self.inner.random_range(lo..hi))
    }

    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut self.inner);
        p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Free-function form of [`Rng::gaussian`].
pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize, variance: f64) -> Result<Tensor> {
    rng.gaussian(rows, cols, variance)
}

//! Seeded randomness.
//!
//! All sampling goes through [`RngState`], a ChaCha8 stream cipher keyed by
//! `seed_from_u64(seed)`. Independent consumers (weight init, shuffling, gating
//! noise) take separate ChaCha stream ids from the same key, so adding draws to
//! one consumer never perturbs another.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ALGORITHM: &str = "chacha8";

/// Stream ids handed out by [`RngState::stream`].
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const SYNTHETIC: u64 = 5;
}

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Fresh generator on ChaCha stream `id` for the same seed.
    pub fn stream(seed: u64, id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(id);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.inner);
    }

    /// I.i.d. N(0, 1) samples of the given shape.
    pub fn standard_normal<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64_lossy(self.normal())).collect();
        Tensor::new(shape.to_vec(), data).expect("shape product matches sample count")
    }

    /// Uniform samples in `[-bound, bound)`.
    pub fn uniform_tensor<T: Scalar>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(self.uniform(-bound, bound)))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape product matches sample count")
    }
}

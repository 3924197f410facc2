//! Seeded, platform-independent random streams.
//!
//! A generator is identified by `(seed, stream)`. Distinct streams under one
//! seed are independent ChaCha8 keystreams, so parallel work can draw from
//! per-task streams and still produce schedule-independent results.

use rand::distributions::uniform::SampleUniform;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream namespaces. The purpose occupies the top byte of the stream id.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const PREVIEW: u64 = 5;
}

const INDEX_BITS: u32 = 56;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    /// Stream `index` within the namespace `purpose`. Injective in
    /// `(purpose, index)` for `index < 2^56`.
    pub fn derive(seed: u64, purpose: u64, index: u64) -> Self {
        debug_assert!(index < 1 << INDEX_BITS);
        Rng::new(
            seed,
            (purpose << INDEX_BITS) | (index & ((1 << INDEX_BITS) - 1)),
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit_f64(&mut self) -> f64 {
        self.inner.gen()
    }

    /// Uniform on the closed interval `[low, high]`.
    pub fn uniform<T: SampleUniform + PartialOrd + Copy>(&mut self, low: T, high: T) -> T {
        self.inner.gen_range(low..=high)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit_f64() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

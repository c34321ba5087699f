//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream keyed by an explicit
//! 64-bit seed plus a stream id. ChaCha is counter based, so the same
//! `(seed, stream)` pair yields the same sequence on every platform, and
//! independent consumers (environment noise, action sampling, vote tie
//! breaking) never perturb each other.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Well-known stream ids. Keeping them in one place makes collisions obvious.
pub mod stream {
    pub const INIT: u64 = 0;
    pub const ACTION: u64 = 1;
    pub const TIE: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const PERTURB: u64 = 5;
    pub const ATTACK: u64 = 6;
    pub const MASK_SEARCH: u64 = 7;
    pub const VALUE_INIT: u64 = 8;
    pub const MINIBATCH: u64 = 9;
    pub const LOSS_MASK: u64 = 10;
    pub const EVAL: u64 = 11;
    pub const SWEEP: u64 = 12;
    /// Environment `i` uses `ENV_BASE + i`.
    pub const ENV_BASE: u64 = 1 << 20;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the range is empty.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

//! Counter-based random streams.
//!
//! Every consumer (parameter init, data generation, augmentation) draws from
//! its own stream derived from the run seed, so adding draws in one place
//! never shifts the values seen by another.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Well-known stream labels.
pub mod streams {
    pub const INIT: u64 = 0x696e_6974;
    pub const DATA: u64 = 0x6461_7461;
    pub const AUGMENT: u64 = 0x6175_676d;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const CHECK: u64 = 0x6368_6b73;
}

/// A ChaCha8 keystream addressed by `(seed, stream, counter)`.
///
/// `counter` is the number of 64-bit words consumed so far, so a state can be
/// reconstructed exactly with [`RngState::at`].
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    counter: u64,
    inner: ChaCha8Rng,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, 0, 0)
    }

    /// Reconstructs the state after `counter` draws on `stream`.
    pub fn at(seed: u64, stream: u64, counter: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        inner.set_word_pos(u128::from(counter) * 2);
        Self { seed, stream, counter, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// An independent child stream identified by `label`.
    pub fn fork(&self, label: u64) -> Self {
        let stream = mix64(self.stream ^ mix64(label.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        Self::at(self.seed, stream, 0)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// `k` distinct values from `0..n`, in draw order (partial Fisher-Yates).
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "choose {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

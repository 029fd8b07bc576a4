//! Splittable, seeded random streams.
//!
//! Every stream is a ChaCha12 generator keyed by a 256-bit key. Child streams
//! derive their key by hashing the parent key together with a label, so a
//! child depends only on `(root seed, label path)` and never on how much of
//! the parent has been consumed. This is what lets independent parts of the
//! generator (graph nodes, retries, worker tasks) draw from the same seed
//! without disturbing one another.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use sha2::{Digest, Sha256};

const TAG_LABEL: u8 = 0x00;
const TAG_INDEX: u8 = 0x01;
const TAG_FORK: u8 = 0x02;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    key: [u8; 32],
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"tabprior/root");
        hasher.update(seed.to_le_bytes());
        Self::from_key(seed, hasher.finalize().into())
    }

    fn from_key(seed: u64, key: [u8; 32]) -> Self {
        Self {
            seed,
            key,
            inner: ChaCha12Rng::from_seed(key),
        }
    }

    fn child(&self, tag: u8, payload: &[u8]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update([tag]);
        hasher.update(payload);
        Self::from_key(self.seed, hasher.finalize().into())
    }

    /// Root seed this stream descends from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by `label`. Does not advance `self`.
    pub fn split(&self, label: &str) -> Self {
        self.child(TAG_LABEL, label.as_bytes())
    }

    /// Child stream keyed by an integer index. Does not advance `self`.
    pub fn split_index(&self, index: u64) -> Self {
        self.child(TAG_INDEX, &index.to_le_bytes())
    }

    /// Child stream keyed by the next output of `self`; advances `self`.
    pub fn fork(&mut self) -> Self {
        let salt = self.inner.next_u64();
        self.child(TAG_FORK, &salt.to_le_bytes())
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn open_uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn log_uniform(&mut self, low: f64, high: f64) -> f64 {
        (low.ln() + (high.ln() - low.ln()) * self.uniform()).exp()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn cauchy(&mut self) -> f64 {
        (std::f64::consts::PI * (self.open_uniform() - 0.5)).tan()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in the inclusive range `[low, high]`.
    pub fn int_inclusive(&mut self, low: i64, high: i64) -> i64 {
        debug_assert!(low <= high);
        self.inner.random_range(low..=high)
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// `k` distinct indices from `[0, n)` in random order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }

    /// Index drawn proportionally to non-negative `weights`.
    pub fn weighted_index(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut target = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if target < w {
                return i;
            }
            target -= w;
        }
        // rounding can leave `target` marginally above the last bucket
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// Natural log of a Gamma(shape, 1) draw. Stable for tiny shapes, where the
    /// draw itself would underflow to zero.
    pub fn ln_gamma_variate(&mut self, shape: f64) -> f64 {
        if shape >= 1.0 {
            let g: f64 = Gamma::new(shape, 1.0)
                .expect("positive shape")
                .sample(&mut self.inner);
            g.ln()
        } else {
            let g: f64 = Gamma::new(shape + 1.0, 1.0)
                .expect("positive shape")
                .sample(&mut self.inner);
            g.ln() + self.open_uniform().ln() / shape
        }
    }

    /// Beta(alpha, beta) via the ratio of two Gamma variates, computed in log space.
    pub fn beta(&mut self, alpha: f64, beta: f64) -> f64 {
        let lx = self.ln_gamma_variate(alpha);
        let ly = self.ln_gamma_variate(beta);
        1.0 / (1.0 + (ly - lx).exp())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

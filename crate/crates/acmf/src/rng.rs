//! Deterministic pseudo-random number generation.
//!
//! Everything stochastic in this crate (masks, weight init, dataset synthesis,
//! noise perturbation) draws from [`SplitMix64`], so a run is fully determined
//! by its seed. The generator is the standard splitmix64 finalizer; the same
//! seed yields the same sequence on every platform.
//!
//! Independent streams are derived with [`SplitMix64::child`], which mixes a
//! label into the *original* seed. A child stream therefore does not depend on
//! how many values were drawn from the parent, which keeps e.g. per-sample
//! mask streams independent of the shuffling stream.

/// Stream labels used to derive child generators. Centralised so the
/// derivation tree is visible in one place.
pub mod stream {
    pub const SHUFFLE: u64 = 0x01;
    pub const MASK: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const SYNTH_TRAIN: u64 = 0x04;
    pub const SYNTH_TEST: u64 = 0x05;
    pub const REFERENCE: u64 = 0x06;
    pub const NOISE: u64 = 0x07;
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// splitmix64 generator with label-based stream derivation.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    seed: u64,
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { seed, state: seed }
    }

    /// Derive an independent stream from this generator's seed and `label`.
    /// The derivation ignores the current draw position.
    pub fn child(&self, label: u64) -> Self {
        Self::new(mix64(self.seed ^ mix64(label.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Fixed-width multiply keeps the mapping deterministic and branch-free.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices drawn uniformly from 0..n, in selection order.
    /// Partial Fisher-Yates; `k` is clamped to `n`.
    pub fn choose_k(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

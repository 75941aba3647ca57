//! Labelled deterministic random streams.
//!
//! Every stochastic step of the harness draws from an [`RngStream`] derived
//! from a root [`Seed`] and a label such as `"init"` or `"order"`. The output
//! of a stream depends only on that pair, so any run can be replayed from its
//! declared seeds and sibling streams never share state.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub const fn new(value: u64) -> Self {
        Seed(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    /// Child seed for `label`: the first word of the labelled stream.
    pub fn derive(self, label: &str) -> Seed {
        Seed(derive_stream(self, label).next_u64())
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

/// FNV-1a over the label bytes; stable across platforms and runs.
pub(crate) fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha8 stream keyed by `(root, label)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
    root: Seed,
    label: String,
}

/// Derives the stream for `label` under `root`.
///
/// Panics if `label` is empty or not ASCII.
pub fn derive_stream(root: Seed, label: &str) -> RngStream {
    assert!(
        !label.is_empty() && label.is_ascii(),
        "stream label must be nonempty ASCII, got {label:?}"
    );
    let mut state = root.0;
    state = splitmix64(&mut state) ^ fnv1a64(label);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    RngStream {
        rng: ChaCha8Rng::from_seed(key),
        root,
        label: label.to_owned(),
    }
}

impl RngStream {
    pub fn root(&self) -> Seed {
        self.root
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn draw_uniform(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_uniform()).collect()
    }

    /// Standard normal variates by Box–Muller. Each pair of uniforms yields
    /// two variates in (cos, sin) order; an odd `n` discards the last sine.
    pub fn draw_gaussian(&mut self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let (a, b) = self.gaussian_pair();
            out.push(a);
            out.push(b);
        }
        out.truncate(n);
        out
    }

    fn gaussian_pair(&mut self) -> (f64, f64) {
        // 1 - u lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Uniform integer in `[0, n)` by widening multiply with rejection.
    ///
    /// Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Fisher–Yates shuffle, descending swap index.
    pub fn shuffle_in_place<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn shuffle<T>(&mut self, mut items: Vec<T>) -> Vec<T> {
        self.shuffle_in_place(&mut items);
        items
    }
}

//! Seeded pseudo-random number generator.
//!
//! The generator is splitmix64 (Steele, Lea & Flood's 64-bit mixer, the one
//! Java's `SplittableRandom` is built on): the state advances by a fixed odd
//! increment and each output is a bijective scramble of the state. It is
//! deliberately hand-rolled and frozen here — every experiment in this crate
//! is reproducible bit-for-bit from a `u64` seed, so the stream must never
//! change out from under us via a dependency upgrade.
//!
//! All distributions are derived from the raw stream by fixed, documented
//! recipes (see the method docs); none cache state between calls, so the
//! mapping from seed to sample sequence is a pure function of the call
//! sequence.

use serde::{Deserialize, Serialize};

/// Splittable deterministic RNG. `seed` is kept alongside the evolving
/// `state` so checkpoints can report how a stream started.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    seed: u64,
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> RngState {
        RngState { seed, state: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Derive an independent child stream. The child is seeded from the
    /// parent's next output (remixed so child and parent never share a
    /// stream prefix); the parent advances by exactly one step, so splits
    /// are as deterministic as draws.
    pub fn split(&mut self) -> RngState {
        RngState::new(mix64(self.next_u64() ^ GOLDEN_GAMMA))
    }

    /// Uniform on [0, 1): the top 53 bits scaled by 2⁻⁵³.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n) by rejection: raw draws above the largest
    /// multiple of n are discarded, so every residue is exactly equally
    /// likely.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < limit {
                return (x % n) as usize;
            }
        }
    }

    /// Standard normal via Box–Muller: two fresh uniforms per call,
    /// returning √(−2 ln u₁)·cos(2π u₂). The sine branch is discarded
    /// rather than cached so the draw count per call is constant.
    pub fn gaussian(&mut self) -> f64 {
        // 1 − uniform() lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Gamma(shape, 1) via Marsaglia–Tsang squeeze; for shape < 1 the
    /// standard boost Gamma(shape+1)·U^(1/shape) is applied.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0 && shape.is_finite(), "gamma shape must be positive");
        if shape < 1.0 {
            let boost = self.gamma(shape + 1.0);
            let u = 1.0 - self.uniform(); // (0, 1]
            return boost * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.gaussian();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = 1.0 - self.uniform();
            // Cheap squeeze first, exact log test as fallback.
            if u < 1.0 - 0.0331 * x * x * x * x {
                return d * v;
            }
            if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Beta(α, β) as G₁/(G₁+G₂) for independent gammas.
    pub fn beta(&mut self, alpha: f64, beta: f64) -> f64 {
        let g1 = self.gamma(alpha);
        let g2 = self.gamma(beta);
        g1 / (g1 + g2)
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below(i + 1);
            slice.swap(i, j);
        }
    }
}

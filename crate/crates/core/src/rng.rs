//! Pinned pseudo-random number generation.
//!
//! Every stochastic quantity in this crate is drawn through [`SeededSampler`], which is
//! xoshiro256++ 1.0 (Blackman & Vigna) seeded through SplitMix64 (Steele, Lea & Flood) —
//! both algorithms are fully specified below so any other implementation can reproduce
//! the byte-exact sample stream from a `(seed, stream)` pair:
//!
//! * stream state: four u64 words produced by SplitMix64 initialised with
//!   `seed + stream * 0x9E3779B97F4A7C15` (wrapping);
//! * `u64` draws: xoshiro256++ (`rotl(s0 + s3, 23) + s0` output function);
//! * uniform on `[0,1)`: `(x >> 11) * 2^-53`; uniform on `(0,1]`: `((x >> 11) + 1) * 2^-53`;
//! * standard Gaussian: Box–Muller, `sqrt(-2 ln u1) * cos(2π u2)` with `u1 ∈ (0,1]` drawn
//!   first and `u2 ∈ [0,1)` second; the companion sine value is discarded so one Gaussian
//!   always consumes exactly two `u64` draws.
//!
//! Distinct streams derived from the same seed are used for distinct sampling purposes so
//! that consuming more draws for one purpose (say, extra discriminator steps) never shifts
//! the sequence seen by another.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 step: advances `state` and returns the next output word.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sample stream identified by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct SeededSampler {
    s: [u64; 4],
    pub seed: u64,
    pub stream: u64,
}

impl SeededSampler {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut sm = seed.wrapping_add(stream.wrapping_mul(GOLDEN));
        let mut s = [0u64; 4];
        for w in &mut s {
            *w = splitmix64(&mut sm);
        }
        // xoshiro256++ requires a nonzero state; SplitMix64 output makes four zero words
        // unreachable in practice, but guard anyway.
        if s == [0, 0, 0, 0] {
            s[0] = GOLDEN;
        }
        Self { s, seed, stream }
    }

    /// Raw xoshiro256++ state constructor (used by the known-answer tests).
    pub fn from_state(s: [u64; 4]) -> Self {
        Self { s, seed: 0, stream: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = (s[0].wrapping_add(s[3])).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]` — safe as a log argument.
    pub fn uniform_open_closed(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard Gaussian via Box–Muller (cosine branch only; two u64 draws per value).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform_open_closed();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Index into `0..weights.len()` distributed proportionally to `weights`
    /// (assumed nonnegative, summing to ~1; the last index absorbs rounding slack).
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    }
}

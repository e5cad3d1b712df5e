//! Portable seeded random streams.
//!
//! Every random draw in the crate goes through [`SeedStream`], a ChaCha8
//! keystream with a fixed, documented mapping from `(seed, stream id)` to
//! bytes and from bytes to the few distributions we need. This keeps scene
//! generation and episode noise reproducible from another language:
//!
//! * key: the 64-bit seed little-endian in bytes 0..8, zeros elsewhere;
//! * stream: the ChaCha 64-bit stream id (one per purpose, see [`streams`]);
//! * `next_u64`: the next 8 keystream bytes, little-endian;
//! * `uniform`: `(next_u64 >> 11) * 2^-53`, in `[0, 1)`;
//! * `int_range(lo, hi)`: `lo + floor(uniform * (hi - lo + 1))`, inclusive;
//! * `gaussian`: Box–Muller on two uniforms, cosine branch only,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream ids used by the crate. Distinct purposes never share a stream.
pub mod streams {
    pub const SCENE: u64 = 1;
    pub const INSTANCE: u64 = 2;
    pub const TORQUE_NOISE: u64 = 3;
    pub const CONTACT_FORCE: u64 = 4;
    pub const LOCALIZATION: u64 = 5;
    pub const CPF: u64 = 6;
    pub const DATASET: u64 = 7;
}

#[derive(Clone, Debug)]
pub struct SeedStream {
    inner: ChaCha8Rng,
}

impl SeedStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Derives an independent child seed, e.g. per edge or per retry.
    pub fn derive(seed: u64, salt: u64) -> u64 {
        SeedStream::new(seed, salt ^ 0x9e37_79b9_7f4a_7c15).next_u64()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Inclusive integer range. Returns `lo` when `hi <= lo`.
    pub fn int_range(&mut self, lo: i64, hi: i64) -> i64 {
        if hi <= lo {
            return lo;
        }
        let span = (hi - lo + 1) as f64;
        lo + ((self.uniform() * span).floor() as i64).min(hi - lo)
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.int_range(0, len as i64 - 1) as usize
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.gaussian()
    }
}

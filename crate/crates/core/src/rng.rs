//! The single source of randomness for the whole crate.
//!
//! SplitMix64 is fixed so that runs replay identically across platforms and
//! across independent implementations of the same pipeline. Streams are
//! derived from `(seed, index)` pairs; every sample in an evaluation owns its
//! own stream, which keeps per-sample results independent of batch order and
//! of the number of worker threads.

use crate::image::ImageTensor;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
pub fn splitmix_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose tags used to split one experiment seed into independent families of
/// streams.
pub mod tags {
    pub const DATA: u64 = 0x6461_7461;
    pub const ENCODER: u64 = 0x656e_636f;
    pub const ATTACK: u64 = 0x6174_7461;
    pub const DEFENSE: u64 = 0x6465_6665;
    pub const TARGET: u64 = 0x7461_7267;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrngStream {
    state: u64,
}

impl PrngStream {
    /// Stream `index` of `seed`: `state = splitmix_mix(seed ^ GOLDEN * index)`.
    pub fn derive(seed: u64, index: u64) -> Self {
        Self {
            state: splitmix_mix(seed ^ GOLDEN_GAMMA.wrapping_mul(index)),
        }
    }

    /// Stream `index` of the family `tag` under `seed`.
    pub fn tagged(seed: u64, tag: u64, index: u64) -> Self {
        Self::derive(splitmix_mix(seed ^ tag.rotate_left(17)), index)
    }

    pub fn from_state(state: u64) -> Self {
        Self { state }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        splitmix_mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw (Box-Muller, cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Multiply-shift; the bias is < n / 2^64 and irrelevant at our sizes.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Child stream split off this one; advances `self` by one draw.
    pub fn split(&mut self) -> PrngStream {
        PrngStream::derive(self.next_u64(), 0)
    }
}

/// Tensor of i.i.d. `U(-eps, eps)` values filled in row-major order.
pub fn sign_noise(stream: &mut PrngStream, shape: (usize, usize, usize), eps: f64) -> ImageTensor {
    let (c, h, w) = shape;
    let mut data = vec![0.0; c * h * w];
    if eps != 0.0 {
        for v in data.iter_mut() {
            *v = stream.uniform(-eps, eps);
        }
    }
    ImageTensor::from_raw(c, h, w, data)
}

/// Free-function form of [`PrngStream::uniform`].
pub fn uniform(stream: &mut PrngStream, lo: f64, hi: f64) -> f64 {
    stream.uniform(lo, hi)
}

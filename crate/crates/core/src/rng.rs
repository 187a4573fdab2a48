//! SplitMix64 generator and the derived mixing helpers.
//!
//! Everything keyed or seeded in this crate (model tables, green lists,
//! token edits, the honest and hijacked sampling streams) bottoms out in
//! this one generator, so determinism and cross-platform stability reduce
//! to these few lines of wrapping integer arithmetic.

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_A: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_B: u64 = 0x94D0_49BB_1331_11EB;

/// The SplitMix64 output finalizer. Stateless; also used as a building
/// block for keyed hashing.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_A);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_B);
    z ^ (z >> 31)
}

/// Two-input keyed mixer: order-sensitive, collision-resistant enough for
/// partition and table derivation.
#[inline]
pub fn keyed_mix(key: u64, x: u64) -> u64 {
    mix64(key ^ mix64(x.wrapping_add(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1): top 53 bits scaled by 2^-53.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * F64_SCALE
    }

    /// Uniform in (0, 1): midpoint offset keeps both endpoints out, which
    /// guarantees strictly positive exponential variates downstream.
    #[inline]
    pub fn next_open_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * F64_SCALE
    }

    /// Uniform integer in [0, n). Modulo bias is below 2^-50 for every n
    /// used in this crate (n <= 4096).
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }
}

const F64_SCALE: f64 = 1.0 / ((1u64 << 53) as f64);

/// Maps a raw 64-bit word to [0, 1) the same way the generator does.
#[inline]
pub fn word_to_uniform(w: u64) -> f64 {
    (w >> 11) as f64 * F64_SCALE
}

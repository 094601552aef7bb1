//! Counter-based seed derivation.
//!
//! Every random stream in a run is keyed by `(master seed, stream tag,
//! indices...)` and mixed with SplitMix64. A trajectory's randomness therefore
//! depends only on its coordinates, never on which worker ran it or in what
//! order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct tags give independent key spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    TrainTask = 0x7472_6169_6e00,
    EvalTask = 0x6576_616c_0000,
    Rollout = 0x726f_6c6c_0000,
    EvalRollout = 0x6576_726f_0000,
    Executor = 0x6578_6563_0000,
    TaskGen = 0x7461_736b_0000,
    Probe = 0x7072_6f62_0000,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit key from a master seed, a stream tag and a list of
/// counters.
pub fn derive(master: u64, stream: Stream, counters: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ stream as u64);
    for &c in counters {
        h = splitmix64(h ^ c);
    }
    h
}

pub fn rng(master: u64, stream: Stream, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream, counters))
}

/// Uniform draw in `[0, 1)` from a key, using the top 53 bits.
#[inline]
pub fn unit_f64(key: u64) -> f64 {
    (splitmix64(key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

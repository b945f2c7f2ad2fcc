//! Deterministic derivation of independent RNG streams.
//!
//! Every stochastic component draws from a stream derived from the master
//! seed plus a context path (task index, round, agent ids, a purpose tag).
//! Evaluation order therefore never changes results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams for different operations disjoint even when
/// the numeric context components collide.
pub mod tag {
    pub const TASK: u64 = 0x7461_736b;
    pub const INITIAL: u64 = 0x696e_6974;
    pub const SELF_SCORE: u64 = 0x7363_6f72;
    pub const NEIGHBOR_SCORE: u64 = 0x6e62_7273;
    pub const REFINE: u64 = 0x7265_6669;
    pub const ADVERSARY: u64 = 0x6164_7673;
    pub const TIE_BREAK: u64 = 0x7469_6562;
    pub const PLACEMENT: u64 = 0x706c_6163;
    pub const TRUTH: u64 = 0x7472_7574;
    pub const TOPOLOGY: u64 = 0x746f_706f;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a sequence of context components into a single 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// Derive an independent RNG stream for the given context path.
pub fn derive(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

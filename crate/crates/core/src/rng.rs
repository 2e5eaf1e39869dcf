//! Seed plumbing. Every random stream in the crate is a `ChaCha8Rng` whose
//! seed is a pure function of a master seed and a stream id, so results do
//! not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `stream` from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix64(mix64(master.wrapping_add(GOLDEN)) ^ stream.wrapping_mul(GOLDEN).wrapping_add(1))
}

/// Stream ids used across the crate, kept distinct so that e.g. the split
/// shuffle and the fold shuffle never share a generator.
pub mod stream {
    pub const SPLIT: u64 = 0x5350_4c49;
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const MINIBATCH: u64 = 0x4d42_4154;
    pub const XOR: u64 = 0x584f_5200;
    pub const TUNE: u64 = 0x5455_0000_0000;
    pub const CHAIN_BASE: u64 = 0x4348_0000_0000;
}

pub fn rng_for(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_stream() {
        let seeds: Vec<u64> = (0..64).map(|c| derive_seed(7, c)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}

//! Seed derivation and generator construction.
//!
//! Every stochastic step in the simulation draws from a `ChaCha8Rng` whose
//! seed is derived from the master seed plus a path of integer tags, so
//! results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Stream tags used when deriving sub-seeds.
pub mod stream {
    pub const DATA: u64 = 0x0D;
    pub const INIT: u64 = 0x1A;
    pub const CLIENT_TRAIN: u64 = 0x2B;
    pub const CLIENT_SPLIT: u64 = 0x2C;
    pub const PARTICIPATION: u64 = 0x3C;
    pub const ADVERSARY_SELECT: u64 = 0x4D;
    pub const LABEL_FLIP: u64 = 0x4E;
    pub const UPDATE_ATTACK: u64 = 0x4F;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master` with an ordered list of tags into a new 64-bit seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Generator seeded directly from `seed`.
pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Generator seeded from `derive_seed(master, tags)`.
pub fn derived_rng(master: u64, tags: &[u64]) -> SimRng {
    seeded_rng(derive_seed(master, tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_order_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }

    #[test]
    fn derived_streams_replay() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(derived_rng(3, &[9]), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(derived_rng(3, &[9]), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
    }
}

//! Deterministic random streams.
//!
//! Every stochastic step draws from a stream keyed by `(seed, tag, index)` so
//! results never depend on the order in which runs, epochs or images are
//! processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Distinct tags keep unrelated consumers of one seed apart.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const EPOCH: u64 = 2;
    pub const CORRUPT: u64 = 3;
    pub const EVAL_PAIRS: u64 = 4;
    pub const EPISODE: u64 = 5;
    pub const LATENT: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with any number of stream coordinates.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, coords: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, coords))
}

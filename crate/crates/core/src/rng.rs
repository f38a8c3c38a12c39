//! Seed derivation. Every random stream in the toolkit is a `ChaCha8Rng`
//! seeded from a base seed plus a path of stream identifiers, so that
//! results never depend on call order across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Prng = ChaCha8Rng;

/// Stream tags used when deriving child seeds.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const LAYERS: u64 = 4;
    pub const FOLDS: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const SWEEP: u64 = 7;
    pub const WORKER: u64 = 8;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with each id in `path` into a new 64-bit seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(base), |acc, &id| splitmix(acc ^ splitmix(id)))
}

pub fn rng_for(base: u64, path: &[u64]) -> Prng {
    Prng::seed_from_u64(derive_seed(base, path))
}

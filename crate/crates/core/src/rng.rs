//! Counter-based seed derivation.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(master_seed, domain)` and indexed by a counter, so results never depend
//! on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags separating independent uses of one master seed.
pub mod domain {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const PRIOR_TRAIN: u64 = 3;
    pub const POSTERIOR_TRAIN: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const MC: u64 = 6;
    pub const STOCHASTIC_PRED: u64 = 7;
    pub const ENSEMBLE: u64 = 8;
    pub const METRICS: u64 = 9;
    pub const DATA: u64 = 10;
    pub const GRID: u64 = 11;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream `index` of the generator keyed by `(master, domain)`.
pub fn derive(master: u64, domain: u64, index: u64) -> Rng {
    let key = splitmix64(master ^ splitmix64(domain));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// A derived 64-bit seed, for handing to components that seed themselves.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(domain)) ^ index)
}

//! Counter-based random stream derivation.
//!
//! Every random draw in the crate comes from a stream keyed on
//! `(master_seed, domain, index)`. The key selects a ChaCha key and the index
//! selects the ChaCha stream, so stream `i` never depends on how many other
//! streams were consumed first or on which worker consumed them.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Domain tags that separate independent uses of the same master seed.
pub mod domain {
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const LATENT: u64 = 0x6c61_7465;
    pub const SCORE: u64 = 0x7363_6f72;
    pub const FEATURES: u64 = 0x6665_6174;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const INIT: u64 = 0x696e_6974;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Returns the generator for stream `index` within `domain` under `master_seed`.
pub fn stream(master_seed: u64, domain: u64, index: u64) -> ChaCha12Rng {
    let key = splitmix64(master_seed ^ splitmix64(domain));
    let mut rng = ChaCha12Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

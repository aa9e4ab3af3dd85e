//! Seed derivation.
//!
//! Every random stream in an experiment is seeded from
//! `derive_seed(master, role, index)`:
//!
//! ```text
//! h   = FNV-1a-64(role bytes)
//! out = splitmix64(master ^ splitmix64(h ^ splitmix64(index)))
//! ```
//!
//! Streams are keyed by role and index, so adding a client or a round never
//! shifts the draws seen by unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn derive_seed(master: u64, role: &str, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(role.as_bytes()) ^ splitmix64(index)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derive_rng(master: u64, role: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(master, role, index))
}

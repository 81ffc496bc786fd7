//! Deterministic seed derivation.
//!
//! Every random stream in the crate is addressed by `(master seed, tag, a, b)`
//! so results do not depend on worker count or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_INITIAL: u64 = 0x01;
pub const TAG_IDIOSYNCRATIC: u64 = 0x02;
pub const TAG_COMMON: u64 = 0x03;
pub const TAG_BINNED: u64 = 0x04;
pub const TAG_INIT_FLOW: u64 = 0x05;
pub const TAG_SLICED: u64 = 0x06;
pub const TAG_GROWTH: u64 = 0x07;
pub const TAG_PATHS: u64 = 0x08;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ tag.wrapping_mul(0xA24B_AED4_963E_E407));
    h = splitmix64(h ^ a.wrapping_mul(0x9FB2_1C65_1E98_DF25));
    splitmix64(h ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(master: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, a, b))
}

//! Seed fan-out: one user-facing seed feeds every random stream of a run.
//!
//! Each stream gets `derive_seed(seed, name)`, a SplitMix64 finalization of
//! the seed XOR-ed with the FNV-1a hash of the stream name. The named streams
//! used by training are [`INIT`], [`SPLIT`], [`SHUFFLE`], [`DROPOUT`] and
//! [`TUNER`].

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: &str = "init";
pub const SPLIT: &str = "split";
pub const SHUFFLE: &str = "shuffle";
pub const DROPOUT: &str = "dropout";
pub const TUNER: &str = "tuner";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, name: &str) -> u64 {
    splitmix64(seed ^ fnv1a(name.as_bytes()))
}

/// Sub-seed for an integer-indexed stream (epoch, batch, trial).
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

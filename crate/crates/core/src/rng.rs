//! Keyed random streams.
//!
//! Every consumer of randomness (a chain, an evaluation example, the
//! trainer's batch sampler) draws from its own ChaCha stream derived from
//! the global seed, a domain tag and an index. Results therefore do not
//! depend on which thread processes which work item.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint.
pub mod domain {
    pub const CHAIN: u64 = 0x6368_6169_6e00_0001;
    pub const TRAINER: u64 = 0x7472_6169_6e00_0002;
    pub const INIT: u64 = 0x696e_6974_0000_0003;
    pub const CLASSIFY: u64 = 0x636c_6173_7300_0004;
    pub const DATA: u64 = 0x6461_7461_0000_0005;
    pub const BATCH: u64 = 0x6261_7463_6800_0006;
    pub const DIAGNOSE: u64 = 0x6469_6167_0000_0007;
    pub const SAMPLE: u64 = 0x7361_6d70_0000_0008;
}

/// splitmix64 finalizer over `seed ^ key`.
pub fn mix(seed: u64, key: u64) -> u64 {
    let mut z = seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream number `index` within `domain` for `seed`.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, domain));
    rng.set_stream(index);
    rng
}

/// A stream resumed at a saved word position.
pub fn stream_at(seed: u64, domain: u64, index: u64, word_pos: u128) -> ChaCha8Rng {
    let mut rng = stream(seed, domain, index);
    rng.set_word_pos(word_pos);
    rng
}

//! Deterministic rng streams. Every trajectory, scene and training example
//! draws from its own stream so results do not depend on batching or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream `stream` of the generator keyed by `(seed, domain)`.
pub fn stream_rng(seed: u64, domain: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(domain)));
    rng.set_stream(stream);
    rng
}

/// Domain tags, kept distinct so different consumers never share a stream.
pub mod domain {
    pub const DATAGEN: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const EVAL: u64 = 5;
}

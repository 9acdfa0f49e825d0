//! Seeded random streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` seeded through
//! [`stream_rng`]. Independent streams (solver reads, reduction rounds) get
//! their seed from [`derive_seed`], a SplitMix64 finalizer applied to the
//! master seed combined with the stream index, so stream `i` never depends on
//! how many other streams exist or in what order they run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the uniform generator, recorded in reports.
pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";
/// Name of the normal transform, recorded in reports.
pub const NORMAL_TRANSFORM: &str = "ziggurat (rand_distr 0.5 StandardNormal)";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` under `master`: `splitmix64(master ^ splitmix64(index))`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

pub fn stream_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

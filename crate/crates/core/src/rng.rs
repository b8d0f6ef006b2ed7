//! Counter-based seeding.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a
//! 64-bit master seed and addressed by a 64-bit stream id (trial index,
//! chunk index, ...). Streams are independent of how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Human-readable description of the derivation, recorded in reports.
pub const DERIVATION: &str = "chacha8(key=seed_from_u64(master), stream=index)";

/// Stream reserved for one-off draws (dataset splits, frames).
pub const AUX_STREAM: u64 = u64::MAX;

pub fn stream(master: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Mixes a sub-key into a master seed (splitmix64 finaliser).
pub fn derive_seed(master: u64, key: u64) -> u64 {
    let mut z = master ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

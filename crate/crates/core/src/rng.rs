//! Counter-based seed derivation.
//!
//! Every random stream in a run is keyed by a master seed plus a small tuple
//! of integers (cell, model, purpose...). Streams never depend on the order in
//! which work is scheduled, so parallel and serial runs produce identical
//! numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a path of stream identifiers.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, path))
}

/// Well-known purpose tags so that two subsystems never share a stream.
pub mod tag {
    pub const POOL: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const RMIA_Z: u64 = 3;
    pub const TARGET_X: u64 = 4;
    pub const Z_SAMPLER: u64 = 5;
    pub const SHADOW: u64 = 6;
    pub const PERMUTE: u64 = 7;
    pub const CELL: u64 = 8;
}

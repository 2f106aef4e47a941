//! Deterministic random streams keyed by (master seed, domain, task index).
//!
//! Parallel tasks each draw from their own ChaCha stream, so results do not
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains keep unrelated consumers of one master seed apart.
pub mod domain {
    pub const SHADOWS: u64 = 1;
    pub const SHOTS: u64 = 2;
    pub const SHOTS_CROSS: u64 = 3;
    pub const FOLDS: u64 = 4;
    pub const FEATURES: u64 = 5;
    pub const DATA: u64 = 6;
    pub const SHADOWS_TEST: u64 = 7;
}

pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

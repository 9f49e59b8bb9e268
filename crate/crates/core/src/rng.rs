//! Counter-based random streams.
//!
//! Every random decision is drawn from a ChaCha stream addressed by
//! `(seed, stream, step)`, so results do not depend on which worker runs a
//! particle or in what order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream id reserved for resampling decisions.
pub const RESAMPLE_STREAM: u64 = u64::MAX;

/// Words reserved per step within a stream.
const STEP_STRIDE: u32 = 40;

pub fn stream_rng(seed: u64, stream: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((step as u128) << STEP_STRIDE);
    rng
}

/// Derives an independent seed, e.g. per run from a base seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

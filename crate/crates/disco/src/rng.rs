//! Counter-based seed derivation.
//!
//! Every random stream in the toolkit is derived from one root seed plus a
//! list of integer tags (variant index, seed index, control step, record
//! index, ...). Streams are therefore independent of execution order and of
//! how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a root seed with an ordered tag list into a single stream seed.
pub fn split_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(root);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag));
    }
    state
}

/// Deterministic RNG for the stream identified by `(root, tags)`.
pub fn stream_rng(root: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(root, tags))
}

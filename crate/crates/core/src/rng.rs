//! Counter-based random streams keyed by `(seed, index)`.
//!
//! Each sample index gets its own ChaCha8 stream, so parallel sweeps produce
//! the same draws regardless of thread count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

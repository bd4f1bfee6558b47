//! Seed derivation.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by
//! `(seed, stream)`, so replication `r` or resample `i` can be regenerated
//! in isolation and results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator for stream `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

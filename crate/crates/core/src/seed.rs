//! Named random sub-streams derived from a single run seed.
//!
//! Every consumer of randomness gets its own ChaCha stream so that, for
//! example, the rollouts of iteration 17 can be replayed without replaying
//! episode generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which component a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Env = 1,
    Rollout = 2,
    Policy = 3,
    Eval = 4,
    Protocol = 5,
    Audit = 6,
}

/// Deterministic generator for `(seed, stream, a, b)`.
pub fn rng_for(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) ^ (a << 24) ^ b);
    rng
}

/// Derive a child seed, e.g. the seed of the `i`-th generated episode.
pub fn child_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    use rand::RngCore;
    rng_for(seed, stream, index, 0xC0FFEE).next_u64()
}

//! Seeded random streams.
//!
//! One run seed feeds every consumer; each consumer reads its own ChaCha
//! stream so adding draws in one place does not shift another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    SwitchInit = 1,
    SingleStateInit = 2,
    Mpdr = 3,
    Geometry = 10,
    Source = 11,
    Reverb = 12,
    Noise = 13,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    stream_indexed(seed, which, 0)
}

/// Stream for the `index`th member of a family, e.g. one per source.
pub fn stream_indexed(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((which as u64) << 32) | index);
    r
}

//! Seed splitting.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed on the
//! single user seed and a fixed stream id per purpose, so changing how many
//! numbers one consumer draws never shifts another consumer's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Split = 4,
    Bootstrap = 5,
    Synthetic = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Generator for one epoch of a per-epoch consumer, so a run resumed at
/// epoch `e` draws exactly what an uninterrupted run draws there.
pub fn epoch_rng(seed: u64, stream: Stream, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | epoch as u64);
    rng
}

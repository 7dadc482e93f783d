//! Named random streams derived from one run seed.
//!
//! Each consumer draws from its own ChaCha stream, so adding draws in one
//! place (say, a new policy branch) never shifts another consumer's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Mix,
    Dropout,
    Subsample,
    Split,
    Sweep,
    Synthetic,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Shuffle => 2,
            Stream::Mix => 3,
            Stream::Dropout => 4,
            Stream::Subsample => 5,
            Stream::Split => 6,
            Stream::Sweep => 7,
            Stream::Synthetic => 8,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

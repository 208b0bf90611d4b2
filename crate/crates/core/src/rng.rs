//! Seeded random streams. Every source of randomness derives from one base
//! seed through a named substream, so changing how one consumer draws numbers
//! never shifts another consumer's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Dataset order and patch selection.
    Data,
    /// Network weight initialization.
    Init,
    /// Anything else drawn during training or tests.
    Sampling,
    /// Phantom anatomy.
    Anatomy,
    /// Phantom misalignment fields.
    Field,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Init => 2,
            Stream::Sampling => 3,
            Stream::Anatomy => 4,
            Stream::Field => 5,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

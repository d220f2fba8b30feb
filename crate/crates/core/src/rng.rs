//! Named random substreams derived from a single run seed.
//!
//! Every stream is a ChaCha8 generator keyed by the run seed, with the
//! stream id selecting an independent ChaCha stream. Positions can be saved
//! and restored through the word position, which is what checkpoints do.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Model weight initialisation.
    Init = 1,
    /// Dropout masks during training.
    Dropout = 2,
    /// Synthetic video layout and feature noise.
    Data = 3,
    /// Synthetic prototype vectors.
    Prototypes = 4,
    /// Mini-batch composition.
    Batch = 5,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

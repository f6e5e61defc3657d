//! Seeded random streams. Every consumer of randomness derives its own
//! ChaCha stream from the run seed so that no two consumers share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TEMPLATES: u64 = 1;
pub const DATASET: u64 = 2;
pub const SPLIT: u64 = 3;
pub const INIT: u64 = 4;
pub const TRAIN: u64 = 5;
pub const DIAGNOSTICS: u64 = 6;
pub const REINIT: u64 = 7;
/// Batch order uses streams `BATCHES + epoch`.
pub const BATCHES: u64 = 1 << 32;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

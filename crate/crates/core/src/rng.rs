//! Seeded random streams.
//!
//! Every stochastic component derives its generator from a user seed plus a
//! stream id, so that independent consumers never share state and results do
//! not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids reserved per component.
pub(crate) mod streams {
    pub const FOLDS: u64 = 0x1000;
    pub const BOOST: u64 = 0x2000;
    pub const GA: u64 = 0x3000;
    pub const GA_FITNESS_FOLDS: u64 = 0x4000;
    pub const SVM: u64 = 0x5000;
    pub const SYNTH: u64 = 0x6000;
}

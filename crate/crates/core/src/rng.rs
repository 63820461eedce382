//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream derived from a
//! named seed, a purpose tag and a counter, so a resumed run replays exactly
//! the draws an uninterrupted run would have made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags keep independent consumers of one seed decorrelated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 0x1d1e_a5e5,
    Batch = 0xba7c_4000,
    Dropout = 0xd409_0u64,
    Split = 0x5b17_0000,
    Gallery = 0x6a11_e000,
    Probe = 0x9b0b_e000,
}

pub fn stream(seed: u64, purpose: Purpose, counter: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (purpose as u64).rotate_left(17));
    rng.set_stream(counter);
    rng
}

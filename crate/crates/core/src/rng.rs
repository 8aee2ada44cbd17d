//! Keyed random streams.
//!
//! Every random draw is taken from a ChaCha stream addressed by
//! `(seed, purpose, index)`. The key holds the seed and the purpose tag and
//! the ChaCha stream id holds the index, so draws for one prompt never depend
//! on how many draws were made for another.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    TrueTheta = 1,
    Features = 2,
    Preference = 3,
    Contamination = 4,
    Shuffle = 5,
    Instance = 6,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

//! Counter-based stream derivation.
//!
//! Every random quantity in a run is drawn from a ChaCha8 stream addressed by
//! `(master seed, domain, index)`. The key is hashed into the ChaCha key and
//! the replica index selects the ChaCha stream, so replica `i` sees the same
//! numbers regardless of scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags keep streams for different consumers disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    EnvInitial = 1,
    EnvForward = 2,
    EnvBackward = 3,
    Brownian = 4,
    AuxBrownian = 5,
    TiltSign = 6,
    Generic = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into one 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Seed for replica `index` of scan row `row` under `master`.
pub fn replica_seed(master: u64, row: u64, index: u64) -> u64 {
    mix(&[master, row, index])
}

/// Stream for `(seed, domain)`; `lane` picks the ChaCha stream.
pub fn stream(seed: u64, domain: Domain, lane: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, domain as u64]));
    rng.set_stream(lane);
    rng
}

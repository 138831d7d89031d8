//! Keyed random streams.
//!
//! Each consumer of randomness gets its own ChaCha8 stream derived from the
//! run seed plus a small key (round, client, purpose). Streams never share
//! state, which makes results independent of the order in which clients are
//! processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the derivation key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Synth = 1,
    Partition = 2,
    Profiles = 3,
    Availability = 4,
    Selection = 5,
    Train = 6,
    Noise = 7,
    Failure = 8,
    LabelNoise = 9,
    Holdout = 10,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with a sequence of key words into a single 64-bit seed.
pub fn derive_seed(seed: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Stream for `purpose`, further keyed by `key`.
pub fn stream(seed: u64, purpose: Purpose, key: &[u64]) -> ChaCha8Rng {
    let mut full = Vec::with_capacity(key.len() + 1);
    full.push(purpose as u64);
    full.extend_from_slice(key);
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &full))
}

/// Stream position usable as a resume cursor.
pub fn cursor(rng: &ChaCha8Rng) -> u64 {
    rng.get_word_pos() as u64
}

/// Rewind or advance `rng` to a cursor previously taken with [`cursor`].
pub fn seek(rng: &mut ChaCha8Rng, cursor: u64) {
    rng.set_word_pos(cursor as u128);
}

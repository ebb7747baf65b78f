//! Keyed random streams.
//!
//! All randomness derives from one top-level seed. Each consumer asks for a
//! generator keyed by a named stream plus integer coordinates (epoch, record
//! index, global step...), so draws never depend on iteration order, worker
//! count, or how far some other stream has advanced. Resuming from a
//! checkpoint therefore only needs the seed and the step counters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Augment,
    Dropout,
    Tta,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x1157,
            Stream::Shuffle => 0x5bff,
            Stream::Augment => 0xa4a4,
            Stream::Dropout => 0xd209,
            Stream::Tta => 0x77a0,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, keys: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream.tag()));
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, stream, keys))
}

/// Stable 64-bit key for a string id (FNV-1a).
pub fn key_of(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

//! Counter-based random streams.
//!
//! Every random draw is taken from a ChaCha stream keyed by
//! `(seed, agent id, purpose)`, so a population can be sampled in any order
//! (or sharded across threads) and still come out bit-identical.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Latent,
    Causal,
    Spurious,
    Outcome,
    /// Exogenous outcome noise after the given adaptation step.
    PostOutcome(u32),
    /// Resampling of the latent for ingested feature tables.
    IngestLatent,
    /// Anything else, keyed by caller-chosen tag.
    Custom(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Latent => 0x4c41_5445_4e54,
            Purpose::Causal => 0x4341_5553_414c,
            Purpose::Spurious => 0x5350_5552_494f,
            Purpose::Outcome => 0x4f55_5443_4f4d,
            Purpose::PostOutcome(g) => 0x504f_5354_0000_0000 ^ u64::from(g),
            Purpose::IngestLatent => 0x494e_4745_5354,
            Purpose::Custom(t) => 0x4355_5354_0000_0000 ^ t.rotate_left(17),
        }
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream identifier for `(seed, id, purpose)`.
pub fn stream_id(seed: u64, id: u64, purpose: Purpose) -> u64 {
    mix64(mix64(mix64(seed) ^ id) ^ purpose.tag())
}

pub fn stream(seed: u64, id: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_id(seed, id, purpose))
}
